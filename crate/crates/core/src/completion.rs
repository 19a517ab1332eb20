//! Mask-constrained completion: search the generator's latent space for
//! an image that agrees with the intact pixels and looks real to the
//! critic, then paste its missing region into the input.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::models::Model;
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{Distribution, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One image plane of flags: `true` (1) is intact, `false` (0) corrupted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    /// Row-major 0/1 values; anything else is rejected.
    pub fn from_values(height: usize, width: usize, values: &[u8]) -> Result<Self> {
        if values.len() != height * width {
            return Err(shape_err!("{} mask values for {height}×{width}", values.len()));
        }
        let bits = values
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(invalid!("mask entry {v} is not 0 or 1")),
            })
            .collect::<Result<_>>()?;
        Ok(Self { height, width, bits })
    }

    /// Reads a `[1, H, W]` or `[H, W]` image: positive pixels are intact.
    pub fn from_image<F: Scalar>(img: &Tensor<F>) -> Result<Self> {
        let (h, w) = match img.shape() {
            [h, w] | [1, h, w] => (*h, *w),
            s => return Err(shape_err!("mask image must be one plane, got {s:?}")),
        };
        let bits = img.data().iter().map(|v| *v > F::zero()).collect();
        Ok(Self {
            height: h,
            width: w,
            bits,
        })
    }

    /// `[1, H, W]` image in `[-1, 1]`: intact pixels white.
    pub fn to_image<F: Scalar>(&self) -> Tensor<F> {
        let data = self.bits.iter().map(|&b| if b { F::one() } else { -F::one() }).collect();
        Tensor::from_vec(&[1, self.height, self.width], data).expect("mask shape")
    }

    pub fn checkerboard(height: usize, width: usize) -> Self {
        let bits = (0..height * width).map(|k| (k / width + k % width) % 2 == 0).collect();
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, intact: bool) {
        self.bits[i * self.width + j] = intact;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_intact(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn count_corrupted(&self) -> usize {
        self.bits.len() - self.count_intact()
    }

    /// 0/1 tensor broadcast to `shape`, whose last two extents must match.
    pub fn expand<F: Scalar>(&self, shape: &[usize]) -> Result<Tensor<F>> {
        let plane = self.height * self.width;
        if shape.len() < 2 || shape[shape.len() - 2..] != [self.height, self.width] {
            return Err(shape_err!("mask {}×{} vs image {shape:?}", self.height, self.width));
        }
        let reps: usize = shape[..shape.len() - 2].iter().product();
        let mut data = Vec::with_capacity(reps * plane);
        for _ in 0..reps {
            data.extend(self.bits.iter().map(|&b| if b { F::one() } else { F::zero() }));
        }
        Tensor::from_vec(shape, data)
    }
}

/// `M ⊙ y`, with the mask repeated over leading axes.
pub fn apply_mask<F: Scalar>(m: &Mask, y: &Tensor<F>) -> Result<Tensor<F>> {
    let mt = m.expand::<F>(y.shape())?;
    y.zip_map(&mt, |a, b| a * b)
}

/// `M ⊙ y + (1 − M) ⊙ g`, computed as a per-pixel selection.
pub fn blend_reconstruct<F: Scalar>(y: &Tensor<F>, m: &Mask, g_of_z: &Tensor<F>) -> Result<Tensor<F>> {
    if y.shape() != g_of_z.shape() {
        return Err(shape_err!("image {:?} vs generated {:?}", y.shape(), g_of_z.shape()));
    }
    m.expand::<F>(y.shape())?;
    let plane = m.bits.len();
    let data = y
        .data()
        .iter()
        .zip(g_of_z.data())
        .enumerate()
        .map(|(k, (&a, &b))| if m.bits[k % plane] { a } else { b })
        .collect();
    Tensor::from_vec(y.shape(), data)
}

/// How the critic's raw output enters `log(1 − D)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualMode {
    /// `D = σ(C)`, so the term is `−softplus(C)`.
    #[default]
    Logistic,
    /// `D = C` directly; the critic must output values below 1.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionConfig {
    pub iterations: usize,
    /// Weight of the perceptual term.
    pub q: f64,
    pub adam: AdamConfig,
    pub restarts: usize,
    /// Latent codes are clamped to `[-z_clamp, z_clamp]` after every step.
    pub z_clamp: f64,
    pub perceptual: PerceptualMode,
    pub seed: u64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            iterations: 1250,
            q: 0.1,
            adam: AdamConfig::latent(),
            restarts: 3,
            z_clamp: 1.0,
            perceptual: PerceptualMode::Logistic,
            seed: 0,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.restarts == 0 {
            return Err(invalid!("iterations and restarts must be at least 1"));
        }
        if !(self.q >= 0.0) {
            return Err(invalid!("q must be non-negative, got {}", self.q));
        }
        if !(self.z_clamp > 0.0) {
            return Err(invalid!("z_clamp must be positive"));
        }
        Ok(())
    }
}

/// `‖M⊙g − M⊙y‖₁` per sample. `gz` is `[n, ...]`; `mask_t` and
/// `masked_y` are constant tensors of the same shape.
pub fn contextual_terms<F: Scalar>(g: &mut Graph<F>, gz: Var, mask_t: Var, masked_y: Var) -> Result<Var> {
    let n = g.shape(gz)[0];
    let per = g.value(gz).numel() / n;
    let mg = g.mul(gz, mask_t)?;
    let d = g.sub(mg, masked_y)?;
    let a = g.abs(d)?;
    g.sum_keep(a, 1, per)
}

/// Scalar contextual loss for one image or a batch, summed.
pub fn contextual_loss<F: Scalar>(g: &mut Graph<F>, gz: Var, y: &Tensor<F>, m: &Mask) -> Result<Var> {
    if g.shape(gz) != y.shape() {
        return Err(shape_err!("generated {:?} vs image {:?}", g.shape(gz), y.shape()));
    }
    let mt = m.expand::<F>(y.shape())?;
    let my = y.zip_map(&mt, |a, b| a * b)?;
    let mt = g.constant(mt);
    let my = g.constant(my);
    let mg = g.mul(gz, mt)?;
    let d = g.sub(mg, my)?;
    g.norm(d, crate::graph::Norm::L1)
}

/// `log(1 − D)` per sample from raw critic outputs of shape `[n]`.
pub fn perceptual_terms<F: Scalar>(g: &mut Graph<F>, critic_out: Var, mode: PerceptualMode) -> Result<Var> {
    match mode {
        PerceptualMode::Logistic => {
            let sp = g.softplus(critic_out)?;
            g.neg(sp)
        }
        PerceptualMode::Raw => {
            if g.value(critic_out).data().iter().any(|&c| !(c < F::one())) {
                return Err(Error::Domain("raw critic output ≥ 1 in log(1 − C)".into()));
            }
            let neg = g.neg(critic_out)?;
            let one_minus = g.shift(neg, F::one())?;
            g.log(one_minus)
        }
    }
}

/// Batch mean of [`perceptual_terms`].
pub fn perceptual_loss<F: Scalar>(g: &mut Graph<F>, critic_out: Var, mode: PerceptualMode) -> Result<Var> {
    let t = perceptual_terms(g, critic_out, mode)?;
    g.mean(t)
}

/// `contextual + q·perceptual`.
pub fn total_loss<F: Scalar>(g: &mut Graph<F>, contextual: Var, perceptual: Var, q: F) -> Result<Var> {
    let p = g.scale(perceptual, q)?;
    g.add(contextual, p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub contextual: f64,
    pub perceptual: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub terms: LossTerms,
}

/// Loss history of one latent search.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub const HEADER: &'static str = "iter,contextual,perceptual,total";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let t = r.terms;
            let _ = writeln!(s, "{},{},{},{}", r.iter, t.contextual, t.perceptual, t.total);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.terms.total).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion<F> {
    /// Winning latent code, `[z_dim...]`.
    pub z: Tensor<F>,
    /// `G(z)` for the winning code, same shape as the input image.
    pub generated: Tensor<F>,
    pub restart: usize,
    /// Losses at the returned code.
    pub final_terms: LossTerms,
    /// Losses before each step of the winning restart.
    pub trace: Trace,
}

/// Fixed inputs of a batched search: rows are `image × restart`.
struct Problem<'a, F: Scalar> {
    gen: &'a Model<F>,
    critic: &'a Model<F>,
    mask_t: Tensor<F>,
    masked_y: Tensor<F>,
    q: F,
    mode: PerceptualMode,
}

struct Evaluated<F> {
    terms: Vec<LossTerms>,
    generated: Tensor<F>,
    grad: Option<Tensor<F>>,
}

impl<F: Scalar> Problem<'_, F> {
    fn eval(&self, z: &Tensor<F>, want_grad: bool) -> Result<Evaluated<F>> {
        let mut g = Graph::new();
        let gb = self.gen.bind(&mut g, false);
        let cb = self.critic.bind(&mut g, false);
        let zv = if want_grad { g.leaf(z.clone()) } else { g.constant(z.clone()) };
        let gz = self.gen.forward_eval(&mut g, &gb, zv)?;
        let mt = g.constant(self.mask_t.clone());
        let my = g.constant(self.masked_y.clone());
        let ctx = contextual_terms(&mut g, gz, mt, my)?;
        let c = self.critic.forward_eval(&mut g, &cb, gz)?;
        let n = g.shape(c)[0];
        let c = g.reshape(c, &[n])?;
        let perc = perceptual_terms(&mut g, c, self.mode)?;
        let total = total_loss(&mut g, ctx, perc, self.q)?;
        let terms: Vec<LossTerms> = (0..n)
            .map(|i| LossTerms {
                contextual: g.value(ctx).data()[i].as_f64(),
                perceptual: g.value(perc).data()[i].as_f64(),
                total: g.value(total).data()[i].as_f64(),
            })
            .collect();
        if terms.iter().any(|t| !t.total.is_finite()) {
            return Err(Error::NonFinite("completion loss".into()));
        }
        let grad = if want_grad {
            let s = g.sum(total)?;
            Some(g.gradients(s, &[zv])?.remove(0))
        } else {
            None
        };
        Ok(Evaluated {
            terms,
            generated: g.value(gz).clone(),
            grad,
        })
    }
}

fn check_models<F: Scalar>(gen: &Model<F>, critic: &Model<F>, image_shape: &[usize]) -> Result<()> {
    if !gen.preset().is_generator() {
        return Err(invalid!("{} is not a generator", gen.preset().name()));
    }
    if critic.preset().input_shape() != image_shape {
        return Err(shape_err!(
            "critic expects {:?}, image is {image_shape:?}",
            critic.preset().input_shape()
        ));
    }
    Ok(())
}

/// Per-sample losses at the given latent codes `[n, z_dim...]`, against
/// one image and mask.
pub fn latent_losses<F: Scalar>(
    z: &Tensor<F>,
    y: &Tensor<F>,
    m: &Mask,
    gen: &Model<F>,
    critic: &Model<F>,
    cfg: &CompletionConfig,
) -> Result<(Vec<LossTerms>, Option<Tensor<F>>)> {
    check_models(gen, critic, y.shape())?;
    let n = z.shape()[0];
    let ys = Tensor::stack(&vec![y.clone(); n])?;
    let mask_t = m.expand::<F>(ys.shape())?;
    let masked_y = ys.zip_map(&mask_t, |a, b| a * b)?;
    let p = Problem {
        gen,
        critic,
        mask_t,
        masked_y,
        q: F::lit(cfg.q),
        mode: cfg.perceptual,
    };
    let e = p.eval(z, true)?;
    Ok((e.terms, e.grad))
}

/// Latent search for one image `[C, H, W]`.
pub fn optimize_latent<F: Scalar>(
    y: &Tensor<F>,
    m: &Mask,
    gen: &Model<F>,
    critic: &Model<F>,
    cfg: &CompletionConfig,
) -> Result<Completion<F>> {
    let mut out = optimize_latent_batch(std::slice::from_ref(y), std::slice::from_ref(m), gen, critic, cfg)?;
    Ok(out.remove(0))
}

/// Runs every `(image, restart)` search in one batched graph. The models
/// run in eval mode, so each row's loss depends on its own code only and
/// Adam's per-element updates keep the searches independent.
pub fn optimize_latent_batch<F: Scalar>(
    ys: &[Tensor<F>],
    masks: &[Mask],
    gen: &Model<F>,
    critic: &Model<F>,
    cfg: &CompletionConfig,
) -> Result<Vec<Completion<F>>> {
    cfg.validate()?;
    if ys.is_empty() || ys.len() != masks.len() {
        return Err(invalid!("{} images but {} masks", ys.len(), masks.len()));
    }
    let image_shape = ys[0].shape().to_vec();
    check_models(gen, critic, &image_shape)?;
    let r = cfg.restarts;
    let mut rows = Vec::with_capacity(ys.len() * r);
    let mut mrows = Vec::with_capacity(ys.len() * r);
    for (y, m) in ys.iter().zip(masks) {
        if y.shape() != image_shape {
            return Err(shape_err!("images differ: {:?} vs {image_shape:?}", y.shape()));
        }
        let mt = m.expand::<F>(y.shape())?;
        let my = y.zip_map(&mt, |a, b| a * b)?;
        for _ in 0..r {
            rows.push(my.clone());
            mrows.push(mt.clone());
        }
    }
    let problem = Problem {
        gen,
        critic,
        mask_t: Tensor::stack(&mrows)?,
        masked_y: Tensor::stack(&rows)?,
        q: F::lit(cfg.q),
        mode: cfg.perceptual,
    };

    let mut z_shape = vec![ys.len() * r];
    z_shape.extend(gen.preset().input_shape());
    let mut z = Rng::new(cfg.seed).sample::<F>(Distribution::StandardNormal, &z_shape);
    let mut adam = AdamState::new(cfg.adam);
    let bound = F::lit(cfg.z_clamp);
    let mut traces = vec![Trace::default(); ys.len() * r];
    for iter in 0..cfg.iterations {
        let e = problem.eval(&z, true)?;
        for (trace, terms) in traces.iter_mut().zip(e.terms) {
            trace.rows.push(TraceRow { iter, terms });
        }
        let grad = e.grad.expect("gradient requested");
        adam.step(&mut [&mut z], &[grad])?;
        for v in z.data_mut() {
            *v = v.max(-bound).min(bound);
        }
    }
    let last = problem.eval(&z, false)?;

    let mut out = Vec::with_capacity(ys.len());
    for b in 0..ys.len() {
        let best = (0..r)
            .min_by(|&i, &j| {
                let (a, c) = (last.terms[b * r + i].total, last.terms[b * r + j].total);
                a.total_cmp(&c).then(i.cmp(&j))
            })
            .expect("restarts ≥ 1");
        let row = b * r + best;
        out.push(Completion {
            z: z.index_outer(row),
            generated: last.generated.index_outer(row),
            restart: best,
            final_terms: last.terms[row],
            trace: std::mem::take(&mut traces[row]),
        });
    }
    Ok(out)
}
