//! Value-level kernels behind the graph operations. All functions take
//! NCHW data as flat slices.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kw) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn spatial_out(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Output indices `j` whose tap `j·stride + offset − pad` lands inside
/// `0..len`.
fn valid_range(out: usize, len: usize, offset: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(offset).div_ceil(stride);
    let hi = if len + pad > offset { ((len + pad - offset - 1) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfolds one sample `[c, h, w]` into `cols: [c·kh·kw, oh·ow]`, writing
/// every entry (zero where the tap falls in the padding).
fn im2col<F: Scalar>(x: &[F], g: &ConvGeom, cols: &mut [F]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let s_out = oh * ow;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for a in 0..g.kh {
            let (i0, i1) = valid_range(oh, g.h, a, g.stride, g.pad);
            for b in 0..g.kw {
                let (j0, j1) = valid_range(ow, g.w, b, g.stride, g.pad);
                let row = (ci * g.kh + a) * g.kw + b;
                let dst = &mut cols[row * s_out..(row + 1) * s_out];
                dst[..i0 * ow].fill(F::zero());
                dst[i1 * ow..].fill(F::zero());
                for i in i0..i1 {
                    let yy = i * g.stride + a - g.pad;
                    let src_row = &plane[yy * g.w..(yy + 1) * g.w];
                    let out = &mut dst[i * ow..(i + 1) * ow];
                    out[..j0].fill(F::zero());
                    out[j1..].fill(F::zero());
                    let x0 = j0 * g.stride + b - g.pad;
                    if g.stride == 1 {
                        out[j0..j1].copy_from_slice(&src_row[x0..x0 + (j1 - j0)]);
                    } else {
                        for (o, v) in out[j0..j1].iter_mut().zip(src_row[x0..].iter().step_by(g.stride)) {
                            *o = *v;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds one sample's columns into `x: [c, h, w]`.
fn col2im_add<F: Scalar>(cols: &[F], g: &ConvGeom, x: &mut [F]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let s_out = oh * ow;
    for ci in 0..g.c {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for a in 0..g.kh {
            let (i0, i1) = valid_range(oh, g.h, a, g.stride, g.pad);
            for b in 0..g.kw {
                let (j0, j1) = valid_range(ow, g.w, b, g.stride, g.pad);
                let row = (ci * g.kh + a) * g.kw + b;
                let src_row = &cols[row * s_out..(row + 1) * s_out];
                for i in i0..i1 {
                    let yy = i * g.stride + a - g.pad;
                    let src = &src_row[i * ow + j0..i * ow + j1];
                    let dst = yy * g.w + j0 * g.stride + b - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in plane[dst..dst + src.len()].iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    } else {
                        for (k, &v) in src.iter().enumerate() {
                            let t = dst + k * g.stride;
                            plane[t] = plane[t] + v;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation: `y[n,o,i,j] = Σ w[o,c,a,b]·x[n,c,i·s+a−p,j·s+b−p]`.
pub(crate) fn conv2d<F: Scalar>(x: &[F], w: &[F], g: &ConvGeom) -> Vec<F> {
    let (k, s) = (g.patch(), g.spatial_out());
    let plane = g.c * g.h * g.w;
    let mut cols = vec![F::zero(); k * s];
    let mut y = vec![F::zero(); g.n * g.o * s];
    for ni in 0..g.n {
        im2col(&x[ni * plane..(ni + 1) * plane], g, &mut cols);
        F::gemm(g.o, k, s, w, (k, 1), &cols, (s, 1), &mut y[ni * g.o * s..(ni + 1) * g.o * s], (s, 1));
    }
    y
}

/// Gradient of [`conv2d`] with respect to its input, given the output
/// gradient `gy: [n,o,oh,ow]`.
pub(crate) fn conv2d_input_grad<F: Scalar>(gy: &[F], w: &[F], g: &ConvGeom) -> Vec<F> {
    let (k, s) = (g.patch(), g.spatial_out());
    let plane = g.c * g.h * g.w;
    let mut cols = vec![F::zero(); k * s];
    let mut x = vec![F::zero(); g.n * plane];
    for ni in 0..g.n {
        F::gemm(k, g.o, s, w, (1, k), &gy[ni * g.o * s..(ni + 1) * g.o * s], (s, 1), &mut cols, (s, 1));
        col2im_add(&cols, g, &mut x[ni * plane..(ni + 1) * plane]);
    }
    x
}

/// Gradient of [`conv2d`] with respect to its kernels.
pub(crate) fn conv2d_weight_grad<F: Scalar>(x: &[F], gy: &[F], g: &ConvGeom) -> Vec<F> {
    let (k, s) = (g.patch(), g.spatial_out());
    let plane = g.c * g.h * g.w;
    let mut cols = vec![F::zero(); k * s];
    let mut part = vec![F::zero(); g.o * k];
    let mut gw = vec![F::zero(); g.o * k];
    for ni in 0..g.n {
        im2col(&x[ni * plane..(ni + 1) * plane], g, &mut cols);
        F::gemm(g.o, s, k, &gy[ni * g.o * s..(ni + 1) * g.o * s], (s, 1), &cols, (1, s), &mut part, (k, 1));
        for (acc, &v) in gw.iter_mut().zip(&part) {
            *acc = *acc + v;
        }
    }
    gw
}

/// Nearest-neighbour ×2 upsampling of `[planes, h, w]`.
pub(crate) fn upsample2<F: Scalar>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![F::zero(); planes * h2 * w2];
    for p in 0..planes {
        for i in 0..h2 {
            for j in 0..w2 {
                out[(p * h2 + i) * w2 + j] = x[(p * h + i / 2) * w + j / 2];
            }
        }
    }
    out
}

/// 2×2 block sums of `[planes, h, w]` (h, w even); adjoint of [`upsample2`].
pub(crate) fn sum_pool2<F: Scalar>(x: &[F], planes: usize, h: usize, w: usize) -> Vec<F> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![F::zero(); planes * h2 * w2];
    for p in 0..planes {
        for i in 0..h {
            for j in 0..w {
                let o = (p * h2 + i / 2) * w2 + j / 2;
                out[o] = out[o] + x[(p * h + i) * w + j];
            }
        }
    }
    out
}

pub(crate) fn matmul<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    F::gemm(m, k, n, a, (k, 1), b, (n, 1), &mut c, (n, 1));
    c
}

pub(crate) fn transpose<F: Scalar>(a: &[F], rows: usize, cols: usize) -> Vec<F> {
    let mut t = vec![F::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// Sums `[outer, mid, inner]` over the outer and inner axes.
pub(crate) fn sum_keep<F: Scalar>(x: &[F], outer: usize, mid: usize, inner: usize) -> Vec<F> {
    let mut out = vec![F::zero(); mid];
    for o in 0..outer {
        for (m, acc) in out.iter_mut().enumerate() {
            let base = (o * mid + m) * inner;
            *acc = *acc + x[base..base + inner].iter().copied().sum::<F>();
        }
    }
    out
}

/// Repeats `[mid]` into `[outer, mid, inner]`.
pub(crate) fn broadcast<F: Scalar>(x: &[F], outer: usize, inner: usize) -> Vec<F> {
    let mid = x.len();
    let mut out = Vec::with_capacity(outer * mid * inner);
    for _ in 0..outer {
        for &v in x {
            out.extend(std::iter::repeat(v).take(inner));
        }
    }
    out
}

pub(crate) fn softplus<F: Scalar>(x: F) -> F {
    // max(x, 0) + log1p(exp(-|x|)) avoids overflow for large |x|
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut y = vec![0.0; g.n * g.o * oh * ow];
        for n in 0..g.n {
            for o in 0..g.o {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for c in 0..g.c {
                            for a in 0..g.kh {
                                for b in 0..g.kw {
                                    let yy = (i * g.stride + a) as isize - g.pad as isize;
                                    let xx = (j * g.stride + b) as isize - g.pad as isize;
                                    if yy >= 0 && xx >= 0 && (yy as usize) < g.h && (xx as usize) < g.w {
                                        acc += w[((o * g.c + c) * g.kh + a) * g.kw + b]
                                            * x[((n * g.c + c) * g.h + yy as usize) * g.w + xx as usize];
                                    }
                                }
                            }
                        }
                        y[((n * g.o + o) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        y
    }

    fn geom(stride: usize, pad: usize) -> ConvGeom {
        ConvGeom { n: 2, c: 3, h: 5, w: 6, o: 4, kh: 3, kw: 3, stride, pad }
    }

    fn fill(len: usize, seed: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64 + seed) * 0.7311).sin()).collect()
    }

    #[test]
    fn conv_matches_direct_loops() {
        for (stride, pad) in [(1, 1), (1, 0), (2, 1), (2, 0), (1, 2), (3, 2)] {
            let g = geom(stride, pad);
            let x = fill(g.n * g.c * g.h * g.w, 0.3);
            let w = fill(g.o * g.c * 9, 1.7);
            let fast = conv2d(&x, &w, &g);
            let slow = naive_conv(&x, &w, &g);
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_adjoint_identities() {
        // <conv(x,w), gy> == <x, input_grad(gy,w)> == <w, weight_grad(x,gy)>
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (3, 2)] {
            let g = geom(stride, pad);
            let x = fill(g.n * g.c * g.h * g.w, 0.1);
            let w = fill(g.o * g.c * 9, 2.2);
            let gy = fill(g.n * g.o * g.out_h() * g.out_w(), 5.5);
            let y = conv2d(&x, &w, &g);
            let lhs: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
            let gx = conv2d_input_grad(&gy, &w, &g);
            let mid: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
            let gw = conv2d_weight_grad(&x, &gy, &g);
            let rhs: f64 = w.iter().zip(&gw).map(|(a, b)| a * b).sum();
            assert!((lhs - mid).abs() < 1e-10);
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn upsample_pool_adjoint() {
        let x = fill(2 * 3 * 4, 0.0);
        let up = upsample2(&x, 2, 3, 4);
        let z = fill(up.len(), 9.0);
        let lhs: f64 = up.iter().zip(&z).map(|(a, b)| a * b).sum();
        let pooled = sum_pool2(&z, 2, 6, 8);
        let rhs: f64 = x.iter().zip(&pooled).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn stable_logistic_helpers() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
        assert!((softplus(0.0f64) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
