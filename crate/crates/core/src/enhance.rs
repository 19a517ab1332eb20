//! Residual enhancement: a network `R` learns the degradation `y − x`, and
//! the cleaned image is `y − R(y)`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::models::{Mode, Model};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Blur then additive noise, both in `[-1, 1]` image units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Degradation {
    pub noise_sigma: f64,
    pub blur_sigma: f64,
}

impl Default for Degradation {
    fn default() -> Self {
        Self {
            noise_sigma: 15.0 / 255.0,
            blur_sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair<F> {
    pub clean: Tensor<F>,
    pub degraded: Tensor<F>,
    pub degradation: Degradation,
}

/// Normalized 1-D Gaussian taps for radius `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur of every trailing `H×W` plane, replicating
/// edge pixels.
pub fn blur<F: Scalar>(x: &Tensor<F>, sigma: f64) -> Result<Tensor<F>> {
    if x.rank() < 2 {
        return Err(shape_err!("blur needs an image, got {:?}", x.shape()));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as i64;
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut out = x.cast::<f64>().into_data();
    let mut tmp = vec![0.0; h * w];
    for plane in out.chunks_exact_mut(h * w) {
        for i in 0..h {
            for j in 0..w {
                tmp[i * w + j] = taps
                    .iter()
                    .enumerate()
                    .map(|(t, k)| k * plane[i * w + (j as i64 + t as i64 - r).clamp(0, w as i64 - 1) as usize])
                    .sum();
            }
        }
        for i in 0..h {
            for j in 0..w {
                plane[i * w + j] = taps
                    .iter()
                    .enumerate()
                    .map(|(t, k)| k * tmp[(i as i64 + t as i64 - r).clamp(0, h as i64 - 1) as usize * w + j])
                    .sum();
            }
        }
    }
    Ok(Tensor::<f64>::from_vec(s, out)?.cast())
}

/// Blur (if `blur_sigma > 0`), add `N(0, noise_sigma²)`, clamp to `[-1, 1]`.
pub fn degrade<F: Scalar>(x: &Tensor<F>, d: &Degradation, rng: &mut Rng) -> Result<Tensor<F>> {
    if !(d.noise_sigma >= 0.0 && d.blur_sigma >= 0.0) {
        return Err(invalid!("degradation strengths must be non-negative"));
    }
    let mut y = blur(x, d.blur_sigma)?;
    if d.noise_sigma > 0.0 {
        for v in y.data_mut() {
            *v = *v + F::lit(d.noise_sigma * rng.normal());
        }
    }
    Ok(y.map(|v| v.max(-F::one()).min(F::one())))
}

/// Degrades each leading-axis slice of `clean`.
pub fn make_pairs<F: Scalar>(clean: &Tensor<F>, d: &Degradation, rng: &mut Rng) -> Result<Vec<ImagePair<F>>> {
    (0..clean.shape()[0])
        .map(|i| {
            let x = clean.index_outer(i);
            Ok(ImagePair {
                degraded: degrade(&x, d, rng)?,
                clean: x,
                degradation: *d,
            })
        })
        .collect()
}

fn stack_pairs<F: Scalar>(pairs: &[&ImagePair<F>]) -> Result<(Tensor<F>, Tensor<F>)> {
    let ys: Vec<Tensor<F>> = pairs.iter().map(|p| p.degraded.clone()).collect();
    let xs: Vec<Tensor<F>> = pairs.iter().map(|p| p.clean.clone()).collect();
    Ok((Tensor::stack(&ys)?, Tensor::stack(&xs)?))
}

/// `(1/2N)·Σ‖pred − (y − x)‖²` for a `[N, ...]` prediction.
pub fn residual_loss<F: Scalar>(g: &mut Graph<F>, pred: Var, y: &Tensor<F>, x: &Tensor<F>) -> Result<Var> {
    if g.shape(pred) != y.shape() || y.shape() != x.shape() {
        return Err(shape_err!("prediction {:?}, degraded {:?}, clean {:?}", g.shape(pred), y.shape(), x.shape()));
    }
    let n = y.shape()[0];
    let target = g.constant(y.zip_map(x, |a, b| a - b)?);
    let d = g.sub(pred, target)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    g.scale(s, F::lit(0.5 / n as f64))
}

/// Eval-mode loss over `pairs`.
pub fn enhancement_loss<F: Scalar>(model: &Model<F>, pairs: &[ImagePair<F>]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(invalid!("empty batch"));
    }
    let refs: Vec<&ImagePair<F>> = pairs.iter().collect();
    let (y, x) = stack_pairs(&refs)?;
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let yv = g.constant(y.clone());
    let pred = model.forward_eval(&mut g, &b, yv)?;
    let l = residual_loss(&mut g, pred, &y, &x)?;
    Ok(g.value(l).item().as_f64())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub degradation: Degradation,
    pub seed: u64,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            adam: AdamConfig::enhance(),
            degradation: Degradation::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnhanceLog {
    /// Mean training loss of each epoch, weighted by batch size.
    pub epoch_loss: Vec<f64>,
}

impl EnhanceLog {
    pub const HEADER: &'static str = "epoch,loss";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for (i, l) in self.epoch_loss.iter().enumerate() {
            let _ = writeln!(s, "{},{}", i + 1, l);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Splits a shuffled index list into batches, folding a trailing single
/// item into the previous batch (batch norm needs two samples).
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

/// Adam on the residual loss, shuffling every epoch. Leaves the model in
/// eval mode.
pub fn train_enhancer<F: Scalar>(
    model: &mut Model<F>,
    pairs: &[ImagePair<F>],
    cfg: &EnhanceConfig,
) -> Result<EnhanceLog> {
    train_enhancer_with(model, pairs, cfg, |_, _| {})
}

/// [`train_enhancer`] with a callback after every epoch.
pub fn train_enhancer_with<F: Scalar>(
    model: &mut Model<F>,
    pairs: &[ImagePair<F>],
    cfg: &EnhanceConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<EnhanceLog> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(invalid!("epochs and batch_size must be at least 1"));
    }
    if pairs.len() < 2 {
        return Err(invalid!("need at least two training pairs, got {}", pairs.len()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut opt = AdamState::new(cfg.adam);
    let mut log = EnhanceLog::default();
    model.set_mode(Mode::Train);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for batch in batches(&order, cfg.batch_size.max(2)) {
            let refs: Vec<&ImagePair<F>> = batch.iter().map(|&i| &pairs[i]).collect();
            let (y, x) = stack_pairs(&refs)?;
            let mut g = Graph::new();
            let b = model.bind(&mut g, true);
            let yv = g.constant(y.clone());
            let pred = model.forward(&mut g, &b, yv)?;
            let l = residual_loss(&mut g, pred, &y, &x)?;
            let lv = g.value(l).item().as_f64();
            if !lv.is_finite() {
                model.set_mode(Mode::Eval);
                return Err(Error::NonFinite("enhancement loss".into()));
            }
            total += lv * batch.len() as f64;
            let grads = g.gradients(l, &b.vars())?;
            opt.step(&mut model.params_mut(), &grads)?;
        }
        let mean = total / pairs.len() as f64;
        on_epoch(epoch, mean);
        log.epoch_loss.push(mean);
    }
    model.set_mode(Mode::Eval);
    Ok(log)
}

/// `clamp(y − R(y), −1, 1)` for `[C, H, W]` or `[N, C, H, W]` input.
pub fn enhance_image<F: Scalar>(model: &Model<F>, y: &Tensor<F>) -> Result<Tensor<F>> {
    let single = y.rank() == 3;
    let batch = if single {
        let mut s = vec![1];
        s.extend_from_slice(y.shape());
        y.reshape(&s)?
    } else {
        y.clone()
    };
    let r = model.predict(&batch)?;
    let out = batch.zip_map(&r, |a, b| (a - b).max(-F::one()).min(F::one()))?;
    if single {
        out.reshape(y.shape())
    } else {
        Ok(out)
    }
}
