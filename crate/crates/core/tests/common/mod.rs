//! Finite-difference gradient checking shared by the test targets.
#![allow(dead_code)]

use inpaint_core::graph::{Graph, Var};
use inpaint_core::{Distribution, Rng, Tensor};

pub const H: f64 = 1e-5;

pub type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Var + 'a;

pub fn eval(build: &Build<'_>, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    // leaves, so builders that differentiate internally see the same graph
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.value(out).item()
}

pub fn numeric(build: &Build<'_>, inputs: &[Tensor]) -> Vec<Vec<f64>> {
    let mut grads = Vec::new();
    for k in 0..inputs.len() {
        let mut gk = Vec::new();
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            gk.push((eval(build, &plus) - eval(build, &minus)) / (2.0 * H));
        }
        grads.push(gk);
    }
    grads
}

pub fn analytic(build: &Build<'_>, inputs: &[Tensor]) -> Vec<Vec<f64>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars);
    g.gradients(out, &vars)
        .unwrap()
        .into_iter()
        .map(|t| t.into_data())
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Largest relative error over the inputs.
pub fn grad_error(build: &Build<'_>, inputs: &[Tensor]) -> f64 {
    let a = analytic(build, inputs);
    let n = numeric(build, inputs);
    a.iter().zip(&n).map(|(ak, nk)| rel_err(ak, nk)).fold(0.0, f64::max)
}

pub fn assert_grads(name: &str, build: &Build<'_>, inputs: &[Tensor], tol: f64) {
    let err = grad_error(build, inputs);
    assert!(err < tol, "{name}: rel-err {err:e} ≥ {tol:e}");
}

pub fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    rng.sample(Distribution::StandardNormal, shape)
}

/// Keeps samples at least 0.1 away from the kink at zero.
pub fn away_from_zero(t: Tensor) -> Tensor {
    t.map(|x| if x >= 0.0 { x + 0.1 } else { x - 0.1 })
}

/// Contracts an arbitrary-shaped output with fixed weights to a scalar.
pub fn contract(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let shape = g.shape(out).to_vec();
    let w = Rng::new(seed).sample(Distribution::StandardNormal, &shape);
    let w = g.constant(w);
    let p = g.mul(out, w).unwrap();
    g.sum(p).unwrap()
}
