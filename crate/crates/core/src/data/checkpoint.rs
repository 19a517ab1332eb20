//! The `WGCK` model checkpoint.
//!
//! Little-endian layout:
//!
//! ```text
//! b"WGCK"  u32 version
//! u32 len, preset tag as JSON
//! u64 rng state
//! u32 tensor count, then per tensor in name order:
//!     u32 len, utf-8 name, u32 rank, rank × u32 dims, f32 payload
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{ArchPreset, Model};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WGCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub preset: ArchPreset,
    pub rng_state: u64,
    /// Parameters and batch-norm buffers, keyed by name.
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

fn is_buffer(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl Checkpoint {
    pub fn from_model<F: Scalar>(model: &Model<F>, rng_state: u64) -> Self {
        let tensors = model
            .params()
            .iter()
            .chain(model.buffers())
            .map(|(k, t)| (k.clone(), t.cast::<f32>()))
            .collect();
        Self {
            preset: model.preset().clone(),
            rng_state,
            tensors,
        }
    }

    /// Rebuilds the model in eval mode.
    pub fn to_model<F: Scalar>(&self) -> Result<Model<F>> {
        let (mut params, mut buffers) = (BTreeMap::new(), BTreeMap::new());
        for (k, t) in &self.tensors {
            let dst = if is_buffer(k) { &mut buffers } else { &mut params };
            dst.insert(k.clone(), t.cast::<F>());
        }
        Model::from_parts(self.preset.clone(), params, buffers)
            .map_err(|e| Error::Checkpoint(format!("tensors do not match preset: {e}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let tag = serde_json::to_string(&self.preset).expect("preset serializes");
        put_bytes(&mut out, tag.as_bytes());
        out.extend_from_slice(&self.rng_state.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let tag = r.string()?;
        let preset: ArchPreset =
            serde_json::from_str(&tag).map_err(|e| Error::Checkpoint(format!("bad preset tag: {e}")))?;
        let rng_state = r.u64()?;
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| Error::Checkpoint(format!("tensor {name}: size overflow")))?;
            let payload = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            preset,
            rng_state,
            tensors,
        })
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("non-utf8 string".into()))
    }
}

pub fn save_checkpoint<F: Scalar>(path: impl AsRef<Path>, model: &Model<F>, rng_state: u64) -> Result<()> {
    std::fs::write(path, Checkpoint::from_model(model, rng_state).encode())?;
    Ok(())
}

/// Loads a model (in eval mode) and the stored rng state.
pub fn load_checkpoint<F: Scalar>(path: impl AsRef<Path>) -> Result<(Model<F>, u64)> {
    let ck = Checkpoint::decode(&std::fs::read(path)?)?;
    Ok((ck.to_model()?, ck.rng_state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Mode;
    use crate::rng::Rng;

    fn model() -> Model<f64> {
        let mut m = Model::init(ArchPreset::Enhancer { depth: 3, width: 4, channels: 1 }, &mut Rng::new(1)).unwrap();
        m.set_mode(Mode::Eval);
        m
    }

    #[test]
    fn canonical_bytes() {
        let bytes = Checkpoint::from_model(&model(), 77).encode();
        let ck = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(ck.rng_state, 77);
        let reloaded: Model<f64> = ck.to_model().unwrap();
        assert_eq!(Checkpoint::from_model(&reloaded, 77).encode(), bytes);
    }

    #[test]
    fn forward_within_cast_error() {
        let m = model();
        let ck = Checkpoint::decode(&Checkpoint::from_model(&m, 0).encode()).unwrap();
        let back: Model<f64> = ck.to_model().unwrap();
        let x = Rng::new(2).sample(crate::rng::Distribution::StandardNormal, &[2, 1, 6, 6]);
        let (a, b) = (m.predict(&x).unwrap(), back.predict(&x).unwrap());
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-5, "{u} vs {v}");
        }
        let a32: Model<f32> = ck.to_model().unwrap();
        let b32: Model<f32> = Checkpoint::decode(&Checkpoint::from_model(&a32, 0).encode()).unwrap().to_model().unwrap();
        let x32 = x.cast::<f32>();
        assert_eq!(a32.predict(&x32).unwrap(), b32.predict(&x32).unwrap());
    }

    #[test]
    fn rejects_tampering() {
        let bytes = Checkpoint::from_model(&model(), 0).encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(Checkpoint::decode(&bad).is_err());
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wgck");
        save_checkpoint(&path, &model(), 5).unwrap();
        let (m, state): (Model<f64>, u64) = load_checkpoint(&path).unwrap();
        assert_eq!(state, 5);
        assert_eq!(m.mode(), Mode::Eval);
        assert!(load_checkpoint::<f64>(dir.path().join("missing")).is_err());
    }
}
