//! Layer chains for the generator, critic and enhancer networks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
/// Weight kept from the old running statistics on each train-mode batch.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Activation(Activation),
    Upsample2,
    AvgPool2,
    /// Reshapes every sample to these extents.
    Reshape(Vec<usize>),
}

impl LayerSpec {
    fn conv3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            pad: 1,
        }
    }

    /// Per-sample output shape, or an error if `input` does not fit.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(shape_err!("dense layer expects [{inputs}], got {input:?}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                pad,
            } => {
                let &[c, h, w] = input else {
                    return Err(shape_err!("conv layer expects [c,h,w], got {input:?}"));
                };
                if c != in_channels {
                    return Err(shape_err!("conv layer expects {in_channels} channels, got {c}"));
                }
                let out = |e: usize| -> Result<usize> {
                    let span = (e + 2 * pad)
                        .checked_sub(kernel)
                        .ok_or_else(|| shape_err!("kernel {kernel} exceeds extent {e}"))?;
                    if span % stride != 0 {
                        return Err(shape_err!("conv output extent not integral for {e}"));
                    }
                    Ok(span / stride + 1)
                };
                Ok(vec![out_channels, out(h)?, out(w)?])
            }
            LayerSpec::BatchNorm { channels } => {
                if input.first() != Some(&channels) {
                    return Err(shape_err!("batchnorm expects {channels} channels, got {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Activation(_) => Ok(input.to_vec()),
            LayerSpec::Upsample2 => {
                let &[c, h, w] = input else {
                    return Err(shape_err!("upsample expects [c,h,w], got {input:?}"));
                };
                Ok(vec![c, 2 * h, 2 * w])
            }
            LayerSpec::AvgPool2 => match *input {
                [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![c, h / 2, w / 2]),
                _ => Err(shape_err!("avg-pool expects [c,h,w] with even extents, got {input:?}")),
            },
            LayerSpec::Reshape(ref to) => {
                if to.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(shape_err!("cannot reshape {input:?} into {to:?}"));
                }
                Ok(to.clone())
            }
        }
    }
}

/// Named architecture with its hyper-extents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ArchPreset {
    GenMlp2d { z_dim: usize, width: usize },
    CriticMlp2d { width: usize },
    GenImg { z_dim: usize, width: usize, side: usize, channels: usize },
    CriticImg { width: usize, side: usize, channels: usize },
    Enhancer { depth: usize, width: usize, channels: usize },
}

pub const DEFAULT_Z_DIM: usize = 64;
pub const DEFAULT_SIDE: usize = 16;

impl ArchPreset {
    pub fn gen_mlp2d() -> Self {
        ArchPreset::GenMlp2d {
            z_dim: DEFAULT_Z_DIM,
            width: 64,
        }
    }

    pub fn critic_mlp2d() -> Self {
        ArchPreset::CriticMlp2d { width: 64 }
    }

    pub fn gen_img() -> Self {
        ArchPreset::GenImg {
            z_dim: DEFAULT_Z_DIM,
            width: 32,
            side: DEFAULT_SIDE,
            channels: 1,
        }
    }

    pub fn critic_img() -> Self {
        ArchPreset::CriticImg {
            width: 16,
            side: DEFAULT_SIDE,
            channels: 1,
        }
    }

    pub fn enhancer() -> Self {
        ArchPreset::Enhancer {
            depth: 7,
            width: 32,
            channels: 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArchPreset::GenMlp2d { .. } => "gen-mlp2d",
            ArchPreset::CriticMlp2d { .. } => "critic-mlp2d",
            ArchPreset::GenImg { .. } => "gen-img",
            ArchPreset::CriticImg { .. } => "critic-img",
            ArchPreset::Enhancer { .. } => "enhancer",
        }
    }

    /// Per-sample input extents.
    pub fn input_shape(&self) -> Vec<usize> {
        match *self {
            ArchPreset::GenMlp2d { z_dim, .. } | ArchPreset::GenImg { z_dim, .. } => vec![z_dim],
            ArchPreset::CriticMlp2d { .. } => vec![2],
            ArchPreset::CriticImg { side, channels, .. } => vec![channels, side, side],
            // any spatial size works; this is the nominal one
            ArchPreset::Enhancer { channels, .. } => vec![channels, DEFAULT_SIDE, DEFAULT_SIDE],
        }
    }

    pub fn is_generator(&self) -> bool {
        matches!(self, ArchPreset::GenMlp2d { .. } | ArchPreset::GenImg { .. })
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        use Activation::{Relu, Tanh};
        use LayerSpec::{AvgPool2, BatchNorm, Dense, Reshape, Upsample2};
        let act = LayerSpec::Activation;
        let layers = match *self {
            ArchPreset::GenMlp2d { z_dim, width } => vec![
                Dense { inputs: z_dim, outputs: width },
                act(Relu),
                Dense { inputs: width, outputs: width },
                act(Relu),
                Dense { inputs: width, outputs: width },
                act(Relu),
                Dense { inputs: width, outputs: 2 },
            ],
            ArchPreset::CriticMlp2d { width } => vec![
                Dense { inputs: 2, outputs: width },
                act(Relu),
                Dense { inputs: width, outputs: width },
                act(Relu),
                Dense { inputs: width, outputs: width },
                act(Relu),
                Dense { inputs: width, outputs: 1 },
            ],
            ArchPreset::GenImg { z_dim, width, side, channels } => {
                if side % 4 != 0 || side < 4 {
                    return Err(invalid!("gen-img side must be a positive multiple of 4, got {side}"));
                }
                let base = side / 4;
                vec![
                    Dense { inputs: z_dim, outputs: width * base * base },
                    Reshape(vec![width, base, base]),
                    act(Relu),
                    Upsample2,
                    LayerSpec::conv3(width, width),
                    BatchNorm { channels: width },
                    act(Relu),
                    Upsample2,
                    LayerSpec::conv3(width, width),
                    BatchNorm { channels: width },
                    act(Relu),
                    LayerSpec::conv3(width, channels),
                    act(Tanh),
                ]
            }
            ArchPreset::CriticImg { width, side, channels } => {
                if side % 4 != 0 || side < 4 {
                    return Err(invalid!("critic-img side must be a positive multiple of 4, got {side}"));
                }
                let base = side / 4;
                vec![
                    LayerSpec::conv3(channels, width),
                    act(Relu),
                    AvgPool2,
                    LayerSpec::conv3(width, 2 * width),
                    act(Relu),
                    AvgPool2,
                    Reshape(vec![2 * width * base * base]),
                    Dense { inputs: 2 * width * base * base, outputs: 1 },
                ]
            }
            ArchPreset::Enhancer { depth, width, channels } => {
                if depth < 2 {
                    return Err(invalid!("enhancer depth must be ≥ 2, got {depth}"));
                }
                let mut l = vec![LayerSpec::conv3(channels, width), act(Relu)];
                for _ in 0..depth - 2 {
                    l.extend([
                        LayerSpec::conv3(width, width),
                        BatchNorm { channels: width },
                        act(Relu),
                    ]);
                }
                l.push(LayerSpec::conv3(width, channels));
                l
            }
        };
        let mut shape = self.input_shape();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(layers)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameters of a model registered in one [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Variables in parameter-name order, matching [`Model::params_mut`].
    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().copied().collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<F> {
    preset: ArchPreset,
    layers: Vec<LayerSpec>,
    params: BTreeMap<String, Tensor<F>>,
    buffers: BTreeMap<String, Tensor<F>>,
    mode: Mode,
}

fn key(layer: usize, what: &str) -> String {
    format!("{layer:02}.{what}")
}

struct BatchStats<F> {
    layer: usize,
    mean: Vec<F>,
    var: Vec<F>,
}

fn followed_by_relu(layers: &[LayerSpec], i: usize) -> bool {
    layers[i + 1..]
        .iter()
        .find(|l| !matches!(l, LayerSpec::BatchNorm { .. }))
        .is_some_and(|l| *l == LayerSpec::Activation(Activation::Relu))
}

impl<F: Scalar> Model<F> {
    /// He-normal weights ahead of relu, Xavier-uniform elsewhere, zero
    /// biases, identity batch norms.
    pub fn init(preset: ArchPreset, rng: &mut Rng) -> Result<Self> {
        let layers = preset.layers()?;
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for (i, layer) in layers.iter().enumerate() {
            let (wshape, fan_in, fan_out, bias) = match *layer {
                LayerSpec::Dense { inputs, outputs } => (vec![inputs, outputs], inputs, outputs, outputs),
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (
                    vec![out_channels, in_channels, kernel, kernel],
                    in_channels * kernel * kernel,
                    out_channels * kernel * kernel,
                    out_channels,
                ),
                LayerSpec::BatchNorm { channels } => {
                    params.insert(key(i, "gamma"), Tensor::ones(&[channels]));
                    params.insert(key(i, "beta"), Tensor::zeros(&[channels]));
                    buffers.insert(key(i, "running_mean"), Tensor::zeros(&[channels]));
                    buffers.insert(key(i, "running_var"), Tensor::ones(&[channels]));
                    continue;
                }
                _ => continue,
            };
            let n: usize = wshape.iter().product();
            let data: Vec<F> = if followed_by_relu(&layers, i) {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n).map(|_| F::lit(std * rng.normal())).collect()
            } else {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| F::lit(rng.uniform_range(-limit, limit))).collect()
            };
            params.insert(key(i, "weight"), Tensor::from_vec(&wshape, data)?);
            params.insert(key(i, "bias"), Tensor::zeros(&[bias]));
        }
        Ok(Self {
            preset,
            layers,
            params,
            buffers,
            mode: Mode::Train,
        })
    }

    /// Reassembles a model from stored tensors, checking that every
    /// expected tensor is present with the right shape.
    pub fn from_parts(
        preset: ArchPreset,
        params: BTreeMap<String, Tensor<F>>,
        buffers: BTreeMap<String, Tensor<F>>,
    ) -> Result<Self> {
        let reference = Self::init(preset.clone(), &mut Rng::new(0))?;
        for (expected, got, kind) in [
            (&reference.params, &params, "parameter"),
            (&reference.buffers, &buffers, "buffer"),
        ] {
            if expected.len() != got.len() {
                return Err(invalid!(
                    "{} expects {} {kind}s, got {}",
                    preset.name(),
                    expected.len(),
                    got.len()
                ));
            }
            for (name, t) in expected {
                let other = got
                    .get(name)
                    .ok_or_else(|| invalid!("missing {kind} {name}"))?;
                if other.shape() != t.shape() {
                    return Err(shape_err!("{kind} {name}: {:?} vs {:?}", other.shape(), t.shape()));
                }
            }
        }
        if buffers.values().any(|t| !t.all_finite()) {
            return Err(Error::NonFinite("batch-norm running statistics".into()));
        }
        Ok(Self {
            layers: reference.layers,
            preset,
            params,
            buffers,
            mode: Mode::Eval,
        })
    }

    pub fn preset(&self) -> &ArchPreset {
        &self.preset
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor<F>> {
        &self.params
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor<F>> {
        &self.buffers
    }

    /// Trainable tensors in name order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.params.values_mut().collect()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.params.get_mut(name)
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Registers the parameters as leaves (`trainable`) or constants.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    g.leaf(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Runs the chain in the model's current mode; train mode folds the
    /// batch statistics into the running statistics.
    pub fn forward(&mut self, g: &mut Graph<F>, bound: &Bound, x: Var) -> Result<Var> {
        let mode = self.mode;
        let mut stats = Vec::new();
        let out = self.run(g, bound, x, mode, &mut stats)?;
        let keep = F::lit(BN_MOMENTUM);
        let fresh = F::one() - keep;
        for s in stats {
            let rm = self.buffers.get_mut(&key(s.layer, "running_mean")).expect("bn buffer");
            for (r, m) in rm.data_mut().iter_mut().zip(&s.mean) {
                *r = keep * *r + fresh * *m;
            }
            let rv = self.buffers.get_mut(&key(s.layer, "running_var")).expect("bn buffer");
            for (r, v) in rv.data_mut().iter_mut().zip(&s.var) {
                *r = keep * *r + fresh * *v;
            }
        }
        Ok(out)
    }

    /// Eval-mode forward; never mutates the model.
    pub fn forward_eval(&self, g: &mut Graph<F>, bound: &Bound, x: Var) -> Result<Var> {
        self.run(g, bound, x, Mode::Eval, &mut Vec::new())
    }

    /// Eval-mode forward on plain values.
    pub fn predict(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = self.forward_eval(&mut g, &bound, xv)?;
        Ok(g.value(y).clone())
    }

    fn param(&self, bound: &Bound, layer: usize, what: &str) -> Result<Var> {
        bound
            .get(&key(layer, what))
            .ok_or_else(|| invalid!("parameter {} not bound", key(layer, what)))
    }

    fn run(&self, g: &mut Graph<F>, bound: &Bound, x: Var, mode: Mode, stats: &mut Vec<BatchStats<F>>) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let expected = self.preset.input_shape();
        let spatial_ok = matches!(self.preset, ArchPreset::Enhancer { .. })
            && shape.len() == 4
            && shape[1] == expected[0];
        if shape.is_empty() || (!spatial_ok && shape[1..] != expected[..]) {
            return Err(shape_err!(
                "{} expects [n, {:?}], got {shape:?}",
                self.preset.name(),
                expected
            ));
        }
        let n = shape[0];
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = match *layer {
                LayerSpec::Dense { outputs, .. } => {
                    let w = self.param(bound, i, "weight")?;
                    let b = self.param(bound, i, "bias")?;
                    let y = g.matmul(h, w)?;
                    let bb = g.broadcast(b, n, 1, &[n, outputs])?;
                    g.add(y, bb)?
                }
                LayerSpec::Conv { stride, pad, .. } => {
                    let w = self.param(bound, i, "weight")?;
                    let b = self.param(bound, i, "bias")?;
                    let y = g.conv2d(h, w, stride, pad)?;
                    let ys = g.shape(y).to_vec();
                    let bb = g.broadcast(b, n, ys[2] * ys[3], &ys)?;
                    g.add(y, bb)?
                }
                LayerSpec::BatchNorm { channels } => self.batchnorm(g, bound, h, i, channels, mode, stats)?,
                LayerSpec::Activation(Activation::Relu) => g.relu(h)?,
                LayerSpec::Activation(Activation::Tanh) => g.tanh(h)?,
                LayerSpec::Activation(Activation::Sigmoid) => g.sigmoid(h)?,
                LayerSpec::Upsample2 => g.upsample2(h)?,
                LayerSpec::AvgPool2 => g.avg_pool2(h)?,
                LayerSpec::Reshape(ref to) => {
                    let mut s = vec![n];
                    s.extend_from_slice(to);
                    g.reshape(h, &s)?
                }
            };
        }
        Ok(h)
    }

    #[allow(clippy::too_many_arguments)]
    fn batchnorm(
        &self,
        g: &mut Graph<F>,
        bound: &Bound,
        x: Var,
        layer: usize,
        channels: usize,
        mode: Mode,
        stats: &mut Vec<BatchStats<F>>,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let n = shape[0];
        let spatial: usize = shape[2..].iter().product();
        let gamma = self.param(bound, layer, "gamma")?;
        let beta = self.param(bound, layer, "beta")?;
        let normalized = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(invalid!("batch norm in train mode needs a batch of at least 2, got {n}"));
                }
                let (normalized, mean, var) = normalize_batch(g, x, n, spatial)?;
                stats.push(BatchStats { layer, mean, var });
                normalized
            }
            Mode::Eval => {
                let rm = &self.buffers[&key(layer, "running_mean")];
                let rv = &self.buffers[&key(layer, "running_var")];
                let inv: Vec<F> = rv
                    .data()
                    .iter()
                    .map(|&v| F::one() / (v + F::lit(BN_EPS)).sqrt())
                    .collect();
                let rm = g.constant(rm.clone());
                let inv = g.constant(Tensor::from_vec(&[channels], inv)?);
                let rm = g.broadcast(rm, n, spatial, &shape)?;
                let inv = g.broadcast(inv, n, spatial, &shape)?;
                let c = g.sub(x, rm)?;
                g.mul(c, inv)?
            }
        };
        let gamma = g.broadcast(gamma, n, spatial, &shape)?;
        let beta = g.broadcast(beta, n, spatial, &shape)?;
        let y = g.mul(normalized, gamma)?;
        g.add(y, beta)
    }
}

/// Normalizes `x: [n, c, spatial…]` with per-channel batch statistics,
/// returning the normalized node with the batch mean and biased variance.
fn normalize_batch<F: Scalar>(g: &mut Graph<F>, x: Var, n: usize, spatial: usize) -> Result<(Var, Vec<F>, Vec<F>)> {
    let shape = g.shape(x).to_vec();
    let count = F::lit((n * spatial) as f64);
    let s = g.sum_keep(x, n, spatial)?;
    let mean = g.scale(s, F::one() / count)?;
    let mean_values = g.value(mean).data().to_vec();
    let mean = g.broadcast(mean, n, spatial, &shape)?;
    let centered = g.sub(x, mean)?;
    let sq = g.square(centered)?;
    let v = g.sum_keep(sq, n, spatial)?;
    let var = g.scale(v, F::one() / count)?;
    let var_values = g.value(var).data().to_vec();
    let denom = g.shift(var, F::lit(BN_EPS))?;
    let inv_std = g.powf(denom, F::lit(-0.5))?;
    let inv_std = g.broadcast(inv_std, n, spatial, &shape)?;
    Ok((g.mul(centered, inv_std)?, mean_values, var_values))
}

/// Train-mode batch normalization of `x: [n, c, …]` before scale and shift.
pub fn batchnorm_normalize<F: Scalar>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() < 2 {
        return Err(shape_err!("batch norm needs [n, c, …], got {shape:?}"));
    }
    let n = shape[0];
    if n < 2 {
        return Err(invalid!("batch norm in train mode needs a batch of at least 2, got {n}"));
    }
    let spatial: usize = shape[2..].iter().product();
    Ok(normalize_batch(g, x, n, spatial)?.0)
}
