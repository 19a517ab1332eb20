//! Parameter update rules.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_pairs<F: Scalar>(params: &[&mut Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(shape_err!("{} parameters but {} gradients", params.len(), grads.len()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(shape_err!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()));
        }
    }
    Ok(())
}

/// `θ ← θ − lr·g` for every pair.
pub fn sgd_step<F: Scalar>(params: &mut [&mut Tensor<F>], grads: &[Tensor<F>], lr: F) -> Result<()> {
    check_pairs(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (x, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *x = *x - lr * d;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Settings commonly paired with gradient-penalty critics.
    pub fn wgan() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }

    pub fn enhance() -> Self {
        Self::default()
    }

    pub fn latent() -> Self {
        Self {
            lr: 1e-2,
            ..Self::default()
        }
    }
}

/// Adam moments for an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
    t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[Tensor<F>]) -> Result<()> {
        check_pairs(params, grads)?;
        if self.t == 0 {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(grads.iter()).any(|(m, g)| m.shape() != g.shape()) {
            return Err(shape_err!("parameter list changed between Adam steps"));
        }
        self.t += 1;
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
        let bias1 = F::one() - F::lit(c.beta1.powi(self.t as i32));
        let bias2 = F::one() - F::lit(c.beta2.powi(self.t as i32));
        let (lr, eps) = (F::lit(c.lr), F::lit(c.eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((x, &d), (mi, vi)) in it {
                *mi = b1 * *mi + one_b1 * d;
                *vi = b2 * *vi + one_b2 * d * d;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *x = *x - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
