//! WGAN training with a gradient penalty.
//!
//! The critic minimises `mean(C(fake)) − mean(C(real)) + λ·GP` and the
//! generator minimises `−mean(C(fake))`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::models::{Mode, Model};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{Distribution, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WganConfig {
    /// Generator update cycles.
    pub epochs: usize,
    pub batch_size: usize,
    pub n_critic: usize,
    pub lambda: f64,
    pub critic_adam: AdamConfig,
    pub generator_adam: AdamConfig,
    pub seed: u64,
    /// Evaluate the penalty at generated samples instead of at random
    /// interpolates between real and generated pairs.
    pub gp_on_fake_only: bool,
}

impl Default for WganConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 128,
            n_critic: 5,
            lambda: 10.0,
            critic_adam: AdamConfig::wgan(),
            generator_adam: AdamConfig::wgan(),
            seed: 0,
            gp_on_fake_only: false,
        }
    }
}

impl WganConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.n_critic == 0 {
            return Err(invalid!("batch_size and n_critic must be at least 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(invalid!("lambda must be non-negative, got {}", self.lambda));
        }
        Ok(())
    }
}

/// One generator cycle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// `mean(C(real)) − mean(C(fake))` from the last critic update.
    pub wasserstein: f64,
    pub critic_loss: f64,
    pub gp: f64,
    pub gen_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "step,wasserstein,critic_loss,gp,gen_loss";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.step, r.wasserstein, r.critic_loss, r.gp, r.gen_loss);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn wasserstein(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.wasserstein).collect()
    }
}

fn check_batches<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("batches differ: {:?} vs {:?}", a.shape(), b.shape()));
    }
    if a.numel() == 0 || a.rank() == 0 {
        return Err(invalid!("empty batch"));
    }
    Ok(())
}

/// `mean(c_fake) − mean(c_real)` on critic outputs.
pub fn critic_wasserstein<F: Scalar>(c_fake: &Tensor<F>, c_real: &Tensor<F>) -> Result<F> {
    check_batches(c_fake, c_real)?;
    Ok(c_fake.mean() - c_real.mean())
}

/// `−mean(c_fake)`.
pub fn generator_loss<F: Scalar>(c_fake: &Tensor<F>) -> Result<F> {
    if c_fake.rank() == 0 {
        return Err(invalid!("empty batch"));
    }
    Ok(-c_fake.mean())
}

/// Critic objective terms, each a scalar node.
#[derive(Clone, Copy, Debug)]
pub struct CriticLoss {
    pub total: Var,
    pub wasserstein: Var,
    pub gp: Var,
}

/// Per-sample points at which the penalty is evaluated.
pub fn penalty_points<F: Scalar>(
    x_real: &Tensor<F>,
    x_fake: &Tensor<F>,
    rng: &mut Rng,
    on_fake_only: bool,
) -> Result<Tensor<F>> {
    check_batches(x_real, x_fake)?;
    if on_fake_only {
        return Ok(x_fake.clone());
    }
    let n = x_real.shape()[0];
    let per = x_real.numel() / n;
    let mut out = x_fake.clone();
    let real = x_real.data();
    for (i, chunk) in out.data_mut().chunks_exact_mut(per).enumerate() {
        let eps = F::lit(rng.uniform());
        for (j, v) in chunk.iter_mut().enumerate() {
            *v = eps * real[i * per + j] + (F::one() - eps) * *v;
        }
    }
    Ok(out)
}

/// `λ·mean((‖∇C(x̂)‖₂ − 1)²)`, kept differentiable in the critic's
/// parameters.
pub fn gradient_penalty<F, C>(
    g: &mut Graph<F>,
    critic: C,
    x_hat: &Tensor<F>,
    lambda: F,
) -> Result<Var>
where
    F: Scalar,
    C: FnOnce(&mut Graph<F>, Var) -> Result<Var>,
{
    let n = x_hat.shape()[0];
    let xv = g.leaf(x_hat.clone());
    let c = critic(g, xv)?;
    let s = g.sum(c)?;
    let grad = g.backward(s, &[xv], true)?[0];
    let flat = g.reshape(grad, &[n, x_hat.numel() / n])?;
    let norms = g.row_norm(flat)?;
    let dev = g.shift(norms, -F::one())?;
    let sq = g.square(dev)?;
    let m = g.mean(sq)?;
    g.scale(m, lambda)
}

/// Full critic objective. `critic` is called twice on plain batches and
/// once inside the penalty.
pub fn critic_loss_total<F, C>(
    g: &mut Graph<F>,
    mut critic: C,
    x_real: &Tensor<F>,
    x_fake: &Tensor<F>,
    lambda: F,
    rng: &mut Rng,
    on_fake_only: bool,
) -> Result<CriticLoss>
where
    F: Scalar,
    C: FnMut(&mut Graph<F>, Var) -> Result<Var>,
{
    let x_hat = penalty_points(x_real, x_fake, rng, on_fake_only)?;
    let real = g.constant(x_real.clone());
    let fake = g.constant(x_fake.clone());
    let c_real = critic(g, real)?;
    let c_fake = critic(g, fake)?;
    let mr = g.mean(c_real)?;
    let mf = g.mean(c_fake)?;
    let wasserstein = g.sub(mf, mr)?;
    let gp = gradient_penalty(g, &mut critic, &x_hat, lambda)?;
    let total = g.add(wasserstein, gp)?;
    Ok(CriticLoss { total, wasserstein, gp })
}

fn finite<F: Scalar>(what: &str, v: F) -> Result<f64> {
    let x = v.as_f64();
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// Cycles through shuffled indices, reshuffling after each pass.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    fn next(&mut self, k: usize, rng: &mut Rng) -> Vec<usize> {
        if self.pos + k > self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + k].to_vec();
        self.pos += k;
        out
    }
}

/// Alternates `n_critic` critic updates with one generator update, for
/// `cfg.epochs` cycles. Both models are left in eval mode.
pub fn train_wgan<F: Scalar>(
    gen: &mut Model<F>,
    critic: &mut Model<F>,
    data: &Tensor<F>,
    cfg: &WganConfig,
) -> Result<TrainLog> {
    train_wgan_with(gen, critic, data, cfg, |_| {})
}

/// [`train_wgan`] with a callback after every cycle.
pub fn train_wgan_with<F: Scalar>(
    gen: &mut Model<F>,
    critic: &mut Model<F>,
    data: &Tensor<F>,
    cfg: &WganConfig,
    mut on_cycle: impl FnMut(&LogRow),
) -> Result<TrainLog> {
    cfg.validate()?;
    if data.rank() < 2 || data.shape()[1..] != critic.preset().input_shape()[..] {
        return Err(shape_err!(
            "dataset {:?} does not match critic input {:?}",
            data.shape(),
            critic.preset().input_shape()
        ));
    }
    let n = data.shape()[0];
    if n < cfg.batch_size {
        return Err(invalid!("dataset has {n} samples, fewer than batch size {}", cfg.batch_size));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut batcher = Batcher {
        order: (0..n).collect(),
        pos: n,
    };
    let z_shape = {
        let mut s = vec![cfg.batch_size];
        s.extend(gen.preset().input_shape());
        s
    };
    let lambda = F::lit(cfg.lambda);
    let mut opt_c = AdamState::new(cfg.critic_adam);
    let mut opt_g = AdamState::new(cfg.generator_adam);
    let mut log = TrainLog::default();
    gen.set_mode(Mode::Train);
    critic.set_mode(Mode::Train);

    for step in 1..=cfg.epochs {
        let mut last = None;
        for _ in 0..cfg.n_critic {
            let real = data.gather_outer(&batcher.next(cfg.batch_size, &mut rng));
            let z = rng.sample::<F>(Distribution::StandardNormal, &z_shape);
            let fake = {
                let mut g = Graph::new();
                let gb = gen.bind(&mut g, false);
                let zv = g.constant(z);
                let out = gen.forward(&mut g, &gb, zv)?;
                g.value(out).clone()
            };
            let mut g = Graph::new();
            let cb = critic.bind(&mut g, true);
            let c: &Model<F> = critic;
            let loss = critic_loss_total(
                &mut g,
                |g: &mut Graph<F>, x| c.forward_eval(g, &cb, x),
                &real,
                &fake,
                lambda,
                &mut rng,
                cfg.gp_on_fake_only,
            )?;
            let total = finite("critic loss", g.value(loss.total).item())?;
            let grads = g.gradients(loss.total, &cb.vars())?;
            opt_c.step(&mut critic.params_mut(), &grads)?;
            last = Some((
                -g.value(loss.wasserstein).item().as_f64(),
                total,
                g.value(loss.gp).item().as_f64(),
            ));
        }

        let z = rng.sample::<F>(Distribution::StandardNormal, &z_shape);
        let mut g = Graph::new();
        let gb = gen.bind(&mut g, true);
        let cb = critic.bind(&mut g, false);
        let zv = g.constant(z);
        let fake = gen.forward(&mut g, &gb, zv)?;
        let c = critic.forward_eval(&mut g, &cb, fake)?;
        let m = g.mean(c)?;
        let loss = g.neg(m)?;
        let gen_loss = finite("generator loss", g.value(loss).item())?;
        let grads = g.gradients(loss, &gb.vars())?;
        opt_g.step(&mut gen.params_mut(), &grads)?;

        let (wasserstein, critic_loss, gp) = last.expect("n_critic ≥ 1");
        let row = LogRow {
            step,
            wasserstein,
            critic_loss,
            gp,
            gen_loss,
        };
        on_cycle(&row);
        log.rows.push(row);
    }
    gen.set_mode(Mode::Eval);
    critic.set_mode(Mode::Eval);
    Ok(log)
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut acc = 0.0;
    for i in 0..xs.len() {
        acc += xs[i];
        if i >= w {
            acc -= xs[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
