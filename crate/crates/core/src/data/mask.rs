//! Binary corruption masks: 1 keeps a pixel, 0 marks it corrupted.

use serde::{Deserialize, Serialize};

use crate::completion::Mask;
use crate::error::{invalid, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskKind {
    /// Zeroes the centred `size`×`size` square.
    CenterBlock { size: usize },
    /// Zeroes a `size`×`size` square at a uniformly drawn position.
    RandomBlock { size: usize },
    /// Zeroes each pixel independently with probability `fraction`.
    RandomPixels { fraction: f64 },
}

impl Default for MaskKind {
    fn default() -> Self {
        MaskKind::CenterBlock { size: 8 }
    }
}

fn block(height: usize, width: usize, top: usize, left: usize, size: usize) -> Mask {
    let mut m = Mask::ones(height, width);
    for i in top..top + size {
        for j in left..left + size {
            m.set(i, j, false);
        }
    }
    m
}

pub fn make_mask(kind: MaskKind, height: usize, width: usize, rng: &mut Rng) -> Result<Mask> {
    if height == 0 || width == 0 {
        return Err(invalid!("mask extents must be positive"));
    }
    match kind {
        MaskKind::CenterBlock { size } | MaskKind::RandomBlock { size } => {
            if size > height || size > width {
                return Err(invalid!("block {size}×{size} does not fit in {height}×{width}"));
            }
            let (top, left) = match kind {
                MaskKind::CenterBlock { .. } => ((height - size) / 2, (width - size) / 2),
                _ => (rng.below(height - size + 1), rng.below(width - size + 1)),
            };
            Ok(block(height, width, top, left, size))
        }
        MaskKind::RandomPixels { fraction } => {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(invalid!("pixel fraction {fraction} outside [0, 1]"));
            }
            let mut m = Mask::ones(height, width);
            for i in 0..height {
                for j in 0..width {
                    if rng.uniform() < fraction {
                        m.set(i, j, false);
                    }
                }
            }
            Ok(m)
        }
    }
}
