//! Procedural stand-ins for a face corpus and a 2-D toy distribution.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Uniform sampling ranges for every free quantity of a synthetic face.
/// Positions are in pixels relative to the image centre; intensities are
/// on the `[-1, 1]` scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaceRanges {
    pub background: (f64, f64),
    pub face: (f64, f64),
    pub center_offset: (f64, f64),
    pub axis_x: (f64, f64),
    pub axis_y: (f64, f64),
    pub eye_dx: (f64, f64),
    pub eye_dy: (f64, f64),
    pub eye_radius: (f64, f64),
    pub eye: (f64, f64),
    pub mouth_dy: (f64, f64),
    pub mouth_half_width: (f64, f64),
    pub mouth_curve: (f64, f64),
    pub mouth: (f64, f64),
}

impl Default for FaceRanges {
    fn default() -> Self {
        Self {
            background: (-1.0, -0.5),
            face: (0.1, 0.7),
            center_offset: (-1.0, 1.0),
            axis_x: (4.5, 6.0),
            axis_y: (5.5, 7.0),
            eye_dx: (1.8, 2.8),
            eye_dy: (1.0, 2.2),
            eye_radius: (0.7, 1.1),
            eye: (-0.9, -0.5),
            mouth_dy: (2.0, 3.2),
            mouth_half_width: (1.5, 2.5),
            mouth_curve: (0.05, 0.25),
            mouth: (-0.8, -0.2),
        }
    }
}

/// One sampled face.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceParams {
    pub background: f64,
    pub face: f64,
    pub center: (f64, f64),
    pub axes: (f64, f64),
    pub eye_offset: (f64, f64),
    pub eye_radius: f64,
    pub eye: f64,
    pub mouth_dy: f64,
    pub mouth_half_width: f64,
    pub mouth_curve: f64,
    pub mouth: f64,
}

fn draw(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.uniform_range(lo, hi)
}

/// Anti-aliased coverage for a signed distance (negative inside).
fn coverage(signed_distance: f64) -> f64 {
    (0.5 - signed_distance).clamp(0.0, 1.0)
}

impl FaceParams {
    pub fn sample(ranges: &FaceRanges, side: usize, rng: &mut Rng) -> Self {
        let mid = (side as f64 - 1.0) / 2.0;
        let scale = side as f64 / 16.0;
        let cx = mid + draw(rng, ranges.center_offset) * scale;
        let cy = mid + draw(rng, ranges.center_offset) * scale;
        Self {
            background: draw(rng, ranges.background),
            face: draw(rng, ranges.face),
            center: (cx, cy),
            axes: (draw(rng, ranges.axis_x) * scale, draw(rng, ranges.axis_y) * scale),
            eye_offset: (draw(rng, ranges.eye_dx) * scale, draw(rng, ranges.eye_dy) * scale),
            eye_radius: draw(rng, ranges.eye_radius) * scale,
            eye: draw(rng, ranges.eye),
            mouth_dy: draw(rng, ranges.mouth_dy) * scale,
            mouth_half_width: draw(rng, ranges.mouth_half_width) * scale,
            mouth_curve: draw(rng, ranges.mouth_curve) / scale,
            mouth: draw(rng, ranges.mouth),
        }
    }

    /// Renders a `[1, side, side]` image with values in `[-1, 1]`.
    pub fn render<F: Scalar>(&self, side: usize) -> Tensor<F> {
        let (cx, cy) = self.center;
        let (ax, ay) = self.axes;
        let mut data = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                let (x, y) = (j as f64, i as f64);
                let r = (((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2)).sqrt();
                let mut v = self.background + (self.face - self.background) * coverage((r - 1.0) * ax.min(ay));

                for ex in [cx - self.eye_offset.0, cx + self.eye_offset.0] {
                    let ey = cy - self.eye_offset.1;
                    let d = ((x - ex).powi(2) + (y - ey).powi(2)).sqrt() - self.eye_radius;
                    v += (self.eye - v) * coverage(d);
                }

                let dx = x - cx;
                if dx.abs() <= self.mouth_half_width + 0.5 {
                    let arc_y = cy + self.mouth_dy - self.mouth_curve * dx * dx;
                    let d = (y - arc_y).abs() - 0.4;
                    let fade = coverage(dx.abs() - self.mouth_half_width);
                    v += (self.mouth - v) * coverage(d) * fade;
                }
                data.push(F::lit(v.clamp(-1.0, 1.0)));
            }
        }
        Tensor::from_vec(&[1, side, side], data).expect("face image shape")
    }
}

/// `n` faces as a `[n, 1, side, side]` tensor.
pub fn gen_faces<F: Scalar>(n: usize, side: usize, ranges: &FaceRanges, rng: &mut Rng) -> Result<Tensor<F>> {
    if n == 0 || side < 4 {
        return Err(invalid!("need n ≥ 1 and side ≥ 4, got n={n}, side={side}"));
    }
    let mut data = Vec::with_capacity(n * side * side);
    for _ in 0..n {
        let face = FaceParams::sample(ranges, side, rng).render::<F>(side);
        data.extend_from_slice(face.data());
    }
    Tensor::from_vec(&[n, 1, side, side], data)
}

/// Equal-weight Gaussian modes spaced evenly on a circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            modes: 8,
            radius: 2.0,
            sigma: 0.05,
        }
    }
}

pub fn mixture_centers(spec: &MixtureSpec) -> Vec<(f64, f64)> {
    (0..spec.modes)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / spec.modes as f64;
            (spec.radius * a.cos(), spec.radius * a.sin())
        })
        .collect()
}

/// `n` samples as a `[n, 2]` tensor.
pub fn gen_mixture2d<F: Scalar>(n: usize, spec: &MixtureSpec, rng: &mut Rng) -> Result<Tensor<F>> {
    if n == 0 || spec.modes == 0 || spec.sigma < 0.0 {
        return Err(invalid!("need n ≥ 1, modes ≥ 1 and sigma ≥ 0"));
    }
    let centers = mixture_centers(spec);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let (cx, cy) = centers[rng.below(spec.modes)];
        data.push(F::lit(cx + spec.sigma * rng.normal()));
        data.push(F::lit(cy + spec.sigma * rng.normal()));
    }
    Tensor::from_vec(&[n, 2], data)
}
