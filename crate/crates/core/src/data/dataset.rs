//! Train/test splits and on-disk dataset folders.

use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::netpbm::{decode_image, encode_pgm};

/// Shuffles `0..n` and cuts after `round(n * train_fraction)` entries.
pub fn split_indices(n: usize, train_fraction: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid!("train fraction {train_fraction} outside (0, 1)"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let cut = ((n as f64 * train_fraction).round() as usize).min(n);
    let test = idx.split_off(cut);
    Ok((idx, test))
}

/// Splits along the leading axis.
pub fn split_dataset<F: Scalar>(ds: &Tensor<F>, train_fraction: f64, rng: &mut Rng) -> Result<(Tensor<F>, Tensor<F>)> {
    if ds.rank() == 0 {
        return Err(invalid!("cannot split a scalar"));
    }
    let (train, test) = split_indices(ds.shape()[0], train_fraction, rng)?;
    if train.is_empty() || test.is_empty() {
        return Err(invalid!(
            "split of {} items at {train_fraction} leaves one side empty",
            ds.shape()[0]
        ));
    }
    Ok((ds.gather_outer(&train), ds.gather_outer(&test)))
}

/// Writes each `[1, H, W]` image of both splits as a PGM file, plus
/// `manifest.csv` listing `file,split`.
pub fn write_dataset<F: Scalar>(dir: &Path, train: &Tensor<F>, test: &Tensor<F>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("file,split\n");
    let mut k = 0;
    for (set, name) in [(train, "train"), (test, "test")] {
        for i in 0..set.shape()[0] {
            let file = format!("img_{k:05}.pgm");
            fs::write(dir.join(&file), encode_pgm(&set.index_outer(i))?)?;
            manifest.push_str(&format!("{file},{name}\n"));
            k += 1;
        }
    }
    fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}

/// Reads a folder written by [`write_dataset`]. Either split may be empty.
pub fn read_dataset<F: Scalar>(dir: &Path) -> Result<(Vec<Tensor<F>>, Vec<Tensor<F>>)> {
    let manifest = fs::read_to_string(dir.join("manifest.csv"))?;
    let mut lines = manifest.lines();
    if lines.next().map(str::trim) != Some("file,split") {
        return Err(Error::Image("manifest.csv must start with `file,split`".into()));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let (file, split) = line
            .split_once(',')
            .ok_or_else(|| Error::Image(format!("bad manifest row `{line}`")))?;
        let img = decode_image(&fs::read(dir.join(file.trim()))?)?;
        match split.trim() {
            "train" => train.push(img),
            "test" => test.push(img),
            other => return Err(Error::Image(format!("unknown split `{other}`"))),
        }
    }
    Ok((train, test))
}
