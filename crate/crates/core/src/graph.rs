//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation evaluates
//! eagerly, stores its result in a new node and returns a [`Var`] handle.
//! [`Graph::backward`] walks the nodes in reverse and expresses every
//! gradient rule with the same graph operations, so with `create_graph`
//! set the returned gradients are ordinary nodes that can be
//! differentiated again (needed for gradient penalties).
//!
//! ```
//! use inpaint_core::graph::Graph;
//! use inpaint_core::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::scalar(3.0));
//! let y = g.square(x).unwrap();
//! let dx = g.backward(y, &[x], false).unwrap()[0];
//! assert_eq!(g.value(dx).item(), 6.0);
//! ```

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{invalid, shape_err, Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

static NEXT_GRAPH: AtomicU32 = AtomicU32::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Log,
    Relu,
    Sigmoid,
    Tanh,
    Square,
    Abs,
    Softplus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Clone, Debug)]
enum Op<F> {
    Leaf,
    Constant,
    Unary(UnaryOp),
    Binary(BinaryOp),
    Scale(F),
    Shift(F),
    Powf(F),
    Reshape,
    Transpose,
    MatMul,
    SumKeep { outer: usize, inner: usize },
    Broadcast { outer: usize, inner: usize },
    RowNorm,
    Conv { stride: usize, pad: usize },
    ConvInputGrad { stride: usize, pad: usize },
    ConvWeightGrad { stride: usize, pad: usize },
    Upsample2,
    SumPool2,
}

#[derive(Debug)]
struct Node<F> {
    op: Op<F>,
    inputs: [usize; 2],
    value: Tensor<F>,
    requires_grad: bool,
}

/// Differentiation context. Single-threaded; build a fresh graph per
/// training step.
#[derive(Debug)]
pub struct Graph<F> {
    id: u32,
    nodes: Vec<Node<F>>,
    no_grad: bool,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

// Gradient rules only combine shapes that were already validated in the
// forward pass.
fn rule(r: Result<Var>) -> Var {
    r.expect("gradient rule on consistent shapes")
}

const NONE: usize = usize::MAX;

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            no_grad: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index as usize >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index as usize)
    }

    fn node(&self, v: Var) -> Result<&Node<F>> {
        Ok(&self.nodes[self.idx(v)?])
    }

    fn var(&self, index: usize) -> Var {
        Var {
            graph: self.id,
            index: index as u32,
        }
    }

    fn push(&mut self, op: Op<F>, inputs: [usize; 2], value: Tensor<F>) -> Var {
        let requires_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => {
                !self.no_grad
                    && inputs
                        .iter()
                        .any(|&i| i != NONE && self.nodes[i].requires_grad)
            }
        };
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        self.var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameter or latent variable).
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.push(Op::Leaf, [NONE, NONE], value)
    }

    /// A value gradients never flow into.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(Op::Constant, [NONE, NONE], value)
    }

    /// Panics if `v` belongs to another graph.
    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.node(v).expect("var of this graph").value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).map(|n| n.requires_grad).unwrap_or(false)
    }

    /// Copies the value out as a constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.node(v)?.value.clone();
        Ok(self.constant(t))
    }

    fn unary_value(&self, a: usize, f: impl Fn(F) -> F) -> Tensor<F> {
        self.nodes[a].value.map(f)
    }

    pub fn unary(&mut self, kind: UnaryOp, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = match kind {
            UnaryOp::Neg => self.unary_value(ia, |x| -x),
            UnaryOp::Log => {
                if let Some(bad) = self.nodes[ia].value.data().iter().find(|&&x| x <= F::zero()) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                self.unary_value(ia, |x| x.ln())
            }
            UnaryOp::Relu => self.unary_value(ia, |x| if x > F::zero() { x } else { F::zero() }),
            UnaryOp::Sigmoid => self.unary_value(ia, kernels::sigmoid),
            UnaryOp::Tanh => self.unary_value(ia, |x| x.tanh()),
            UnaryOp::Square => self.unary_value(ia, |x| x * x),
            UnaryOp::Abs => self.unary_value(ia, |x| x.abs()),
            UnaryOp::Softplus => self.unary_value(ia, kernels::softplus),
        };
        Ok(self.push(Op::Unary(kind), [ia, NONE], value))
    }

    /// Elementwise binary op. Shapes must match, or one side must be
    /// rank 0 (scalar broadcast).
    pub fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        if sa != sb {
            if sa.is_empty() {
                let shape = sb.to_vec();
                let a = self.broadcast(a, 1, numel(&shape), &shape)?;
                return self.binary(kind, a, b);
            }
            if sb.is_empty() {
                let shape = sa.to_vec();
                let b = self.broadcast(b, 1, numel(&shape), &shape)?;
                return self.binary(kind, a, b);
            }
            return Err(shape_err!("{kind:?} of {sa:?} and {sb:?}"));
        }
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let value = match kind {
            BinaryOp::Add => va.zip_map(vb, |x, y| x + y)?,
            BinaryOp::Sub => va.zip_map(vb, |x, y| x - y)?,
            BinaryOp::Mul => va.zip_map(vb, |x, y| x * y)?,
            BinaryOp::Div => va.zip_map(vb, |x, y| x / y)?,
        };
        Ok(self.push(Op::Binary(kind), [ia, ib], value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Tanh, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Square, a)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Abs, a)
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Softplus, a)
    }

    /// `c · a` for a constant `c`.
    pub fn scale(&mut self, a: Var, c: F) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.unary_value(ia, |x| x * c);
        Ok(self.push(Op::Scale(c), [ia, NONE], value))
    }

    /// `a + c` for a constant `c`.
    pub fn shift(&mut self, a: Var, c: F) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.unary_value(ia, |x| x + c);
        Ok(self.push(Op::Shift(c), [ia, NONE], value))
    }

    /// `a^p` for a constant exponent; inputs must be positive unless `p`
    /// is a non-negative integer.
    pub fn powf(&mut self, a: Var, p: F) -> Result<Var> {
        let ia = self.idx(a)?;
        let integral = p.fract() == F::zero() && p >= F::zero();
        if !integral && self.nodes[ia].value.data().iter().any(|&x| x <= F::zero()) {
            return Err(Error::Domain(format!("non-integer power {p} of non-positive value")));
        }
        let value = self.unary_value(ia, |x| x.powf(p));
        Ok(self.push(Op::Powf(p), [ia, NONE], value))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = if shape.is_empty() {
            if self.nodes[ia].value.numel() != 1 {
                return Err(shape_err!("cannot reshape {:?} to a scalar", self.nodes[ia].value.shape()));
            }
            Tensor::scalar(self.nodes[ia].value.item())
        } else {
            self.nodes[ia].value.reshape(shape)?
        };
        Ok(self.push(Op::Reshape, [ia, NONE], value))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let &[r, c] = v.shape() else {
            return Err(shape_err!("transpose needs rank 2, got {:?}", v.shape()));
        };
        let value = Tensor::from_parts(vec![c, r], kernels::transpose(v.data(), r, c));
        Ok(self.push(Op::Transpose, [ia, NONE], value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (&[m, k], &[k2, n]) = (va.shape(), vb.shape()) else {
            return Err(shape_err!("matmul needs rank-2 operands, got {:?} and {:?}", va.shape(), vb.shape()));
        };
        if k != k2 {
            return Err(shape_err!("matmul inner extents {k} != {k2}"));
        }
        let value = Tensor::from_parts(vec![m, n], kernels::matmul(va.data(), vb.data(), m, k, n));
        Ok(self.push(Op::MatMul, [ia, ib], value))
    }

    /// Views `a` as `[outer, mid, inner]` and sums the outer and inner
    /// axes, giving a tensor of shape `[mid]`.
    pub fn sum_keep(&mut self, a: Var, outer: usize, inner: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let n = self.nodes[ia].value.numel();
        if outer == 0 || inner == 0 || n % (outer * inner) != 0 {
            return Err(shape_err!("cannot view {n} elements as [{outer}, _, {inner}]"));
        }
        let mid = n / (outer * inner);
        let value = Tensor::from_parts(
            vec![mid],
            kernels::sum_keep(self.nodes[ia].value.data(), outer, mid, inner),
        );
        Ok(self.push(Op::SumKeep { outer, inner }, [ia, NONE], value))
    }

    /// Repeats `a` (viewed as `[mid]`) into `[outer, mid, inner]`, then
    /// reshapes to `shape`.
    pub fn broadcast(&mut self, a: Var, outer: usize, inner: usize, shape: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let mid = self.nodes[ia].value.numel();
        if outer * mid * inner != numel(shape) || shape.contains(&0) {
            return Err(shape_err!("cannot broadcast {mid} elements ×{outer}×{inner} into {shape:?}"));
        }
        let value = Tensor::from_parts(
            shape.to_vec(),
            kernels::broadcast(self.nodes[ia].value.data(), outer, inner),
        );
        Ok(self.push(Op::Broadcast { outer, inner }, [ia, NONE], value))
    }

    /// Sum or mean over every element, as a rank-0 tensor.
    pub fn reduce(&mut self, kind: Reduce, a: Var) -> Result<Var> {
        let n = self.value_checked(a)?.numel();
        let s = self.sum_keep(a, 1, n)?;
        let s = self.reshape(s, &[])?;
        match kind {
            Reduce::Sum => Ok(s),
            Reduce::Mean => self.scale(s, F::one() / F::lit(n as f64)),
        }
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Sum, a)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.reduce(Reduce::Mean, a)
    }

    fn value_checked(&self, v: Var) -> Result<&Tensor<F>> {
        Ok(&self.node(v)?.value)
    }

    /// Euclidean norm of each row of a rank-2 tensor, shape `[rows]`. The
    /// gradient at a zero row is taken as zero.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let &[rows, cols] = v.shape() else {
            return Err(shape_err!("row_norm needs rank 2, got {:?}", v.shape()));
        };
        let data = v
            .data()
            .chunks_exact(cols)
            .map(|r| r.iter().map(|&x| x * x).sum::<F>().sqrt())
            .collect();
        let value = Tensor::from_parts(vec![rows], data);
        Ok(self.push(Op::RowNorm, [ia, NONE], value))
    }

    /// `Σ|aᵢ|` or `sqrt(Σaᵢ²)` over every element.
    pub fn norm(&mut self, a: Var, p: Norm) -> Result<Var> {
        match p {
            Norm::L1 => {
                let abs = self.abs(a)?;
                self.sum(abs)
            }
            Norm::L2 => {
                let n = self.value_checked(a)?.numel();
                let flat = self.reshape(a, &[1, n])?;
                let r = self.row_norm(flat)?;
                self.reshape(r, &[])
            }
        }
    }

    fn conv_geom(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
        let (&[n, c, h, wd], &[o, c2, kh, kw]) = (x, w) else {
            return Err(shape_err!("conv2d needs [n,c,h,w] input and [o,c,kh,kw] kernels, got {x:?} and {w:?}"));
        };
        if c != c2 {
            return Err(shape_err!("conv2d input has {c} channels, kernels expect {c2}"));
        }
        if stride == 0 {
            return Err(invalid!("conv2d stride must be ≥ 1"));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(invalid!("conv2d kernel extents must be odd, got {kh}×{kw}"));
        }
        for (extent, k) in [(h, kh), (wd, kw)] {
            let span = (extent + 2 * pad)
                .checked_sub(k)
                .ok_or_else(|| shape_err!("kernel {k} larger than padded extent {}", extent + 2 * pad))?;
            if span % stride != 0 {
                return Err(shape_err!(
                    "output extent ({extent}+2·{pad}−{k})/{stride}+1 is not integral"
                ));
            }
        }
        Ok(ConvGeom { n, c, h, w: wd, o, kh, kw, stride, pad })
    }

    /// 2-D cross-correlation with zero padding. `x` is `[n,c,h,w]` or
    /// `[c,h,w]`; kernels are `[o,c,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, kernels_: Var, stride: usize, pad: usize) -> Result<Var> {
        if self.value_checked(x)?.rank() == 3 {
            let s = self.shape(x).to_vec();
            let x4 = self.reshape(x, &[1, s[0], s[1], s[2]])?;
            let y = self.conv2d(x4, kernels_, stride, pad)?;
            let ys = self.shape(y)[1..].to_vec();
            return self.reshape(y, &ys);
        }
        let (ix, iw) = (self.idx(x)?, self.idx(kernels_)?);
        let g = Self::conv_geom(self.nodes[ix].value.shape(), self.nodes[iw].value.shape(), stride, pad)?;
        let data = kernels::conv2d(self.nodes[ix].value.data(), self.nodes[iw].value.data(), &g);
        let value = Tensor::from_parts(vec![g.n, g.o, g.out_h(), g.out_w()], data);
        Ok(self.push(Op::Conv { stride, pad }, [ix, iw], value))
    }

    /// Adjoint of [`Graph::conv2d`] in its input: maps an output-shaped
    /// `gy` back to input extents `in_hw`.
    fn conv2d_input_grad(&mut self, gy: Var, kernels_: Var, in_hw: (usize, usize), stride: usize, pad: usize) -> Result<Var> {
        let (ig, iw) = (self.idx(gy)?, self.idx(kernels_)?);
        let gs = self.nodes[ig].value.shape().to_vec();
        let ws = self.nodes[iw].value.shape().to_vec();
        let g = Self::conv_geom(&[gs[0], ws[1], in_hw.0, in_hw.1], &ws, stride, pad)?;
        if gs != [g.n, g.o, g.out_h(), g.out_w()] {
            return Err(shape_err!("conv input-gradient got {gs:?}"));
        }
        let data = kernels::conv2d_input_grad(self.nodes[ig].value.data(), self.nodes[iw].value.data(), &g);
        let value = Tensor::from_parts(vec![g.n, g.c, g.h, g.w], data);
        Ok(self.push(Op::ConvInputGrad { stride, pad }, [ig, iw], value))
    }

    /// Adjoint of [`Graph::conv2d`] in its kernels.
    fn conv2d_weight_grad(&mut self, x: Var, gy: Var, k_hw: (usize, usize), stride: usize, pad: usize) -> Result<Var> {
        let (ix, ig) = (self.idx(x)?, self.idx(gy)?);
        let xs = self.nodes[ix].value.shape().to_vec();
        let gs = self.nodes[ig].value.shape().to_vec();
        let g = Self::conv_geom(&xs, &[gs[1], xs[1], k_hw.0, k_hw.1], stride, pad)?;
        let data = kernels::conv2d_weight_grad(self.nodes[ix].value.data(), self.nodes[ig].value.data(), &g);
        let value = Tensor::from_parts(vec![g.o, g.c, g.kh, g.kw], data);
        Ok(self.push(Op::ConvWeightGrad { stride, pad }, [ix, ig], value))
    }

    fn planes(shape: &[usize]) -> Result<(usize, usize, usize)> {
        if shape.len() < 2 {
            return Err(shape_err!("spatial op needs rank ≥ 2, got {shape:?}"));
        }
        let r = shape.len();
        Ok((shape[..r - 2].iter().product(), shape[r - 2], shape[r - 1]))
    }

    /// Nearest-neighbour ×2 upsampling of the two trailing axes.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let shape = self.nodes[ia].value.shape().to_vec();
        let (p, h, w) = Self::planes(&shape)?;
        let mut out = shape.clone();
        let r = out.len();
        out[r - 2] *= 2;
        out[r - 1] *= 2;
        let value = Tensor::from_parts(out, kernels::upsample2(self.nodes[ia].value.data(), p, h, w));
        Ok(self.push(Op::Upsample2, [ia, NONE], value))
    }

    /// 2×2 block sums of the two trailing axes (both must be even).
    pub fn sum_pool2(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let shape = self.nodes[ia].value.shape().to_vec();
        let (p, h, w) = Self::planes(&shape)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err!("sum_pool2 needs even extents, got {h}×{w}"));
        }
        let mut out = shape.clone();
        let r = out.len();
        out[r - 2] /= 2;
        out[r - 1] /= 2;
        let value = Tensor::from_parts(out, kernels::sum_pool2(self.nodes[ia].value.data(), p, h, w));
        Ok(self.push(Op::SumPool2, [ia, NONE], value))
    }

    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let s = self.sum_pool2(a)?;
        self.scale(s, F::lit(0.25))
    }

    fn const_like(&mut self, index: usize, f: impl Fn(F) -> F) -> Var {
        let t = self.nodes[index].value.map(f);
        self.constant(t)
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to `wrt`,
    /// in the same order. Inputs that do not influence `loss` get zeros.
    ///
    /// With `create_graph`, the returned gradients are themselves
    /// differentiable nodes; otherwise they are constants.
    pub fn backward(&mut self, loss: Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        let il = self.idx(loss)?;
        for &w in wrt {
            self.idx(w)?;
        }
        if self.nodes[il].value.numel() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got {:?}", self.nodes[il].value.shape()));
        }
        let saved = self.no_grad;
        self.no_grad = !create_graph;
        let mut grads: Vec<Option<Var>> = vec![None; il + 1];
        let seed = self.const_like(il, |_| F::one());
        grads[il] = Some(seed);

        for i in (0..=il).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let [a, b] = self.nodes[i].inputs;
            let need_a = a != NONE && self.nodes[a].requires_grad;
            let need_b = b != NONE && self.nodes[b].requires_grad;
            if !need_a && !need_b {
                continue;
            }
            let out = self.var(i);
            let (va, vb) = (
                (a != NONE).then(|| self.var(a)),
                (b != NONE).then(|| self.var(b)),
            );
            let op = self.nodes[i].op.clone();
            let (ga, gb) = self.local_grads(op, out, g, va, vb, need_a, need_b);
            for (input, gi) in [(a, ga), (b, gb)] {
                if let Some(gi) = gi {
                    grads[input] = Some(match grads[input] {
                        None => gi,
                        Some(prev) => rule(self.add(prev, gi)),
                    });
                }
            }
        }

        let result = wrt
            .iter()
            .map(|&w| {
                let iw = w.index as usize;
                match grads.get(iw).copied().flatten() {
                    Some(gv) if create_graph => gv,
                    Some(gv) => {
                        // detach so later graph growth never reaches back
                        let t = self.nodes[gv.index as usize].value.clone();
                        self.constant(t)
                    }
                    None => self.const_like(iw, |_| F::zero()),
                }
            })
            .collect();
        self.no_grad = saved;
        Ok(result)
    }

    /// Convenience: first-order gradient values.
    pub fn gradients(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor<F>>> {
        let vars = self.backward(loss, wrt, false)?;
        Ok(vars.into_iter().map(|v| self.value(v).clone()).collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn local_grads(
        &mut self,
        op: Op<F>,
        out: Var,
        g: Var,
        a: Option<Var>,
        b: Option<Var>,
        need_a: bool,
        need_b: bool,
    ) -> (Option<Var>, Option<Var>) {
        let ai = a.map(|v| v.index as usize).unwrap_or(NONE);
        let one = F::one();
        let ga = match &op {
            Op::Leaf | Op::Constant => None,
            Op::Unary(kind) => {
                let a = a.unwrap();
                let d = match kind {
                    UnaryOp::Neg => return (Some(rule(self.neg(g))), None),
                    UnaryOp::Log => return (Some(rule(self.div(g, a))), None),
                    UnaryOp::Relu => self.const_like(ai, |x| if x > F::zero() { one } else { F::zero() }),
                    UnaryOp::Abs => self.const_like(ai, |x| {
                        if x > F::zero() {
                            one
                        } else if x < F::zero() {
                            -one
                        } else {
                            F::zero()
                        }
                    }),
                    UnaryOp::Sigmoid => {
                        let one_minus = rule(self.neg(out));
                        let one_minus = rule(self.shift(one_minus, one));
                        rule(self.mul(out, one_minus))
                    }
                    UnaryOp::Tanh => {
                        let sq = rule(self.square(out));
                        let neg = rule(self.neg(sq));
                        rule(self.shift(neg, one))
                    }
                    UnaryOp::Square => rule(self.scale(a, F::lit(2.0))),
                    UnaryOp::Softplus => rule(self.sigmoid(a)),
                };
                Some(rule(self.mul(g, d)))
            }
            Op::Binary(kind) => {
                let (a, b) = (a.unwrap(), b.unwrap());
                let (ga, gb) = match kind {
                    BinaryOp::Add => (need_a.then_some(g), need_b.then_some(g)),
                    BinaryOp::Sub => (need_a.then_some(g), need_b.then(|| rule(self.neg(g)))),
                    BinaryOp::Mul => (
                        need_a.then(|| rule(self.mul(g, b))),
                        need_b.then(|| rule(self.mul(g, a))),
                    ),
                    BinaryOp::Div => (
                        need_a.then(|| rule(self.div(g, b))),
                        need_b.then(|| {
                            let t = rule(self.mul(g, out));
                            let t = rule(self.div(t, b));
                            rule(self.neg(t))
                        }),
                    ),
                };
                return (ga, gb);
            }
            Op::Scale(c) => Some(rule(self.scale(g, *c))),
            Op::Shift(_) => Some(g),
            Op::Powf(p) => {
                let d = rule(self.powf(a.unwrap(), *p - one));
                let d = rule(self.scale(d, *p));
                Some(rule(self.mul(g, d)))
            }
            Op::Reshape => {
                let shape = self.shape(a.unwrap()).to_vec();
                Some(rule(self.reshape(g, &shape)))
            }
            Op::Transpose => Some(rule(self.transpose(g))),
            Op::MatMul => {
                let (a, b) = (a.unwrap(), b.unwrap());
                let ga = need_a.then(|| {
                    let bt = rule(self.transpose(b));
                    rule(self.matmul(g, bt))
                });
                let gb = need_b.then(|| {
                    let at = rule(self.transpose(a));
                    rule(self.matmul(at, g))
                });
                return (ga, gb);
            }
            Op::SumKeep { outer, inner } => {
                let shape = self.shape(a.unwrap()).to_vec();
                Some(rule(self.broadcast(g, *outer, *inner, &shape)))
            }
            Op::Broadcast { outer, inner } => {
                let shape = self.shape(a.unwrap()).to_vec();
                let s = rule(self.sum_keep(g, *outer, *inner));
                Some(rule(self.reshape(s, &shape)))
            }
            Op::RowNorm => {
                let a = a.unwrap();
                let cols = self.shape(a)[1];
                let shape = self.shape(a).to_vec();
                // a zero row has zero entries, so any finite divisor works
                let oi = out.index as usize;
                let bump = self.const_like(oi, |y| if y == F::zero() { one } else { F::zero() });
                let safe = rule(self.add(out, bump));
                let ratio = rule(self.div(g, safe));
                let ratio = rule(self.broadcast(ratio, 1, cols, &shape));
                Some(rule(self.mul(a, ratio)))
            }
            Op::Conv { stride, pad } => {
                let (x, w) = (a.unwrap(), b.unwrap());
                let xs = self.shape(x).to_vec();
                let ws = self.shape(w).to_vec();
                let gx = need_a.then(|| rule(self.conv2d_input_grad(g, w, (xs[2], xs[3]), *stride, *pad)));
                let gw = need_b.then(|| rule(self.conv2d_weight_grad(x, g, (ws[2], ws[3]), *stride, *pad)));
                return (gx, gw);
            }
            Op::ConvInputGrad { stride, pad } => {
                // out = Aᵀ(w)·gy
                let (gy, w) = (a.unwrap(), b.unwrap());
                let ws = self.shape(w).to_vec();
                let ggy = need_a.then(|| rule(self.conv2d(g, w, *stride, *pad)));
                let gw = need_b.then(|| rule(self.conv2d_weight_grad(g, gy, (ws[2], ws[3]), *stride, *pad)));
                return (ggy, gw);
            }
            Op::ConvWeightGrad { stride, pad } => {
                let (x, gy) = (a.unwrap(), b.unwrap());
                let xs = self.shape(x).to_vec();
                let gx = need_a.then(|| rule(self.conv2d_input_grad(gy, g, (xs[2], xs[3]), *stride, *pad)));
                let ggy = need_b.then(|| rule(self.conv2d(x, g, *stride, *pad)));
                return (gx, ggy);
            }
            Op::Upsample2 => Some(rule(self.sum_pool2(g))),
            Op::SumPool2 => Some(rule(self.upsample2(g))),
        };
        (if need_a { ga } else { None }, None)
    }
}
