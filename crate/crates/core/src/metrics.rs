//! Image quality: MSE, PSNR and SSIM on the `[0, 255]` scale.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_VALUE: f64 = 255.0;

/// Maps `[-1, 1]` images to `[0, 255]` without quantizing.
pub fn to_255<F: Scalar>(x: &Tensor<F>) -> Tensor<f64> {
    x.cast::<f64>().map(|v| 127.5 * (v + 1.0))
}

fn check<F: Scalar>(f: &Tensor<F>, g: &Tensor<F>) -> Result<()> {
    if f.shape() != g.shape() {
        return Err(shape_err!("images differ: {:?} vs {:?}", f.shape(), g.shape()));
    }
    if f.rank() < 2 {
        return Err(shape_err!("expected an image, got {:?}", f.shape()));
    }
    Ok(())
}

/// Mean squared difference over every pixel and channel.
pub fn mse<F: Scalar>(f: &Tensor<F>, g: &Tensor<F>) -> Result<f64> {
    check(f, g)?;
    let s: f64 = f
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    Ok(s / f.numel() as f64)
}

/// `20·log10(255/√MSE)`; identical images give `+∞`.
pub fn psnr<F: Scalar>(f: &Tensor<F>, g: &Tensor<F>) -> Result<f64> {
    let e = mse(f, g)?;
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (MAX_VALUE / e.sqrt()).log10()
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SsimWindow {
    /// Sliding `size`×`size` Gaussian window over every fully contained
    /// position. Images smaller than the window use [`SsimWindow::Global`].
    Gaussian { size: usize, sigma: f64 },
    /// One uniform window covering the image.
    Global,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub window: SsimWindow,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            window: SsimWindow::Gaussian { size: 11, sigma: 1.5 },
        }
    }
}

impl SsimParams {
    pub fn global() -> Self {
        Self {
            window: SsimWindow::Global,
            ..Self::default()
        }
    }
}

const C1: f64 = (0.01 * MAX_VALUE) * (0.01 * MAX_VALUE);
const C2: f64 = (0.03 * MAX_VALUE) * (0.03 * MAX_VALUE);
const C3: f64 = C2 / 2.0;

fn pow(base: f64, e: f64) -> f64 {
    if e == 1.0 {
        base
    } else if e.fract() == 0.0 && e.abs() < i32::MAX as f64 {
        base.powi(e as i32)
    } else {
        base.powf(e)
    }
}

/// SSIM of one window given normalized weights.
fn window_ssim(x: &[f64], y: &[f64], w: &[f64], p: &SsimParams) -> f64 {
    let (mut mx, mut my) = (0.0, 0.0);
    for k in 0..w.len() {
        mx += w[k] * x[k];
        my += w[k] * y[k];
    }
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for k in 0..w.len() {
        let (dx, dy) = (x[k] - mx, y[k] - my);
        vx += w[k] * dx * dx;
        vy += w[k] * dy * dy;
        cxy += w[k] * dx * dy;
    }
    let (sx, sy) = (vx.sqrt(), vy.sqrt());
    let l = (2.0 * mx * my + C1) / (mx * mx + my * my + C1);
    let c = (2.0 * sx * sy + C2) / (vx + vy + C2);
    let s = (cxy + C3) / (sx * sy + C3);
    pow(l, p.alpha) * pow(c, p.beta) * pow(s, p.gamma)
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut w = Vec::with_capacity(size * size);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

fn plane_ssim(x: &[f64], y: &[f64], h: usize, w: usize, p: &SsimParams) -> f64 {
    match p.window {
        SsimWindow::Gaussian { size, sigma } if size <= h && size <= w => {
            let weights = gaussian_window(size, sigma);
            let mut bx = vec![0.0; size * size];
            let mut by = vec![0.0; size * size];
            let mut total = 0.0;
            let mut count = 0;
            for i in 0..=h - size {
                for j in 0..=w - size {
                    for a in 0..size {
                        let row = (i + a) * w + j;
                        bx[a * size..(a + 1) * size].copy_from_slice(&x[row..row + size]);
                        by[a * size..(a + 1) * size].copy_from_slice(&y[row..row + size]);
                    }
                    total += window_ssim(&bx, &by, &weights, p);
                    count += 1;
                }
            }
            total / count as f64
        }
        _ => {
            let weights = vec![1.0 / (h * w) as f64; h * w];
            window_ssim(x, y, &weights, p)
        }
    }
}

/// Mean SSIM over windows, then over channel planes.
pub fn ssim<F: Scalar>(x: &Tensor<F>, y: &Tensor<F>, params: &SsimParams) -> Result<f64> {
    check(x, y)?;
    if let SsimWindow::Gaussian { size, sigma } = params.window {
        if size == 0 || !(sigma > 0.0) {
            return Err(invalid!("SSIM window needs size ≥ 1 and sigma > 0"));
        }
    }
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let xs: Vec<f64> = x.data().iter().map(|v| v.as_f64()).collect();
    let ys: Vec<f64> = y.data().iter().map(|v| v.as_f64()).collect();
    let planes = xs.len() / (h * w);
    let total: f64 = xs
        .chunks_exact(h * w)
        .zip(ys.chunks_exact(h * w))
        .map(|(a, b)| plane_ssim(a, b, h, w, params))
        .sum();
    Ok(total / planes as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image scores plus corpus means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QualityReport {
    pub images: Vec<ImageScore>,
}

impl QualityReport {
    /// Scores `[0, 255]` images.
    pub fn push<F: Scalar>(&mut self, name: &str, f: &Tensor<F>, g: &Tensor<F>, params: &SsimParams) -> Result<()> {
        self.images.push(ImageScore {
            name: name.to_string(),
            psnr: psnr(f, g)?,
            ssim: ssim(f, g, params)?,
        });
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.images.len()
    }

    pub fn mean_psnr(&self) -> f64 {
        self.images.iter().map(|s| s.psnr).sum::<f64>() / self.count() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.images.iter().map(|s| s.ssim).sum::<f64>() / self.count() as f64
    }

    /// `file,psnr_db,ssim` rows and a trailing `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("file,psnr_db,ssim\n");
        for r in &self.images {
            let _ = writeln!(s, "{},{},{}", r.name, r.psnr, r.ssim);
        }
        let _ = writeln!(s, "mean,{},{}", self.mean_psnr(), self.mean_ssim());
        s
    }
}
