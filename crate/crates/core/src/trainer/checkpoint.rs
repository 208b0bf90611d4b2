//! Single-file checkpoint:
//!
//! ```text
//! bytes 0..8    magic "RSCKPT1\n"
//! bytes 8..16   u64 little-endian metadata length L
//! next L bytes  UTF-8 JSON metadata (config, hash, epoch, seed, tensor index)
//! remainder     f32 little-endian tensor data, in index order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RSCKPT1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data section, in elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Canonical config text.
    pub config: String,
    pub config_hash: String,
    pub variant: String,
    pub channel_scale: f64,
    pub window: (f32, f32),
    pub seed: u64,
    pub epoch: usize,
    pub iteration: usize,
    /// Validation MAE (HU) of the stored parameters, when measured.
    pub val_mae: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    /// Builds the tensor index from `params`; any index in `meta` is replaced.
    pub fn new(mut meta: CheckpointMeta, params: ParamStore<f32>) -> Self {
        let mut offset = 0;
        meta.tensors = params
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        Checkpoint { meta, params }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * self.params.num_scalars());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in &self.meta.tensors {
            for v in self.params.get(&e.name)?.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        if bytes.len() < 16 {
            return Err(Error::Corruption("checkpoint truncated in header".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(Error::Corruption("checkpoint truncated in metadata".into()));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&body[..len])
            .map_err(|e| Error::Corruption(format!("checkpoint metadata: {e}")))?;
        let data = &body[len..];
        let total: usize = meta.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
        if data.len() != 4 * total {
            return Err(Error::Corruption(format!(
                "checkpoint holds {} data bytes, index requires {}",
                data.len(),
                4 * total
            )));
        }
        let mut params = ParamStore::new();
        for e in &meta.tensors {
            let n: usize = e.shape.iter().product();
            if e.offset + n > total {
                return Err(Error::Corruption(format!("tensor `{}` exceeds data section", e.name)));
            }
            let values: Vec<f32> = data[4 * e.offset..4 * (e.offset + n)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Corruption(format!("tensor `{}` has non-finite values", e.name)));
            }
            params.insert(e.name.clone(), Tensor::new(e.shape.clone(), values));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut p = ParamStore::new();
        p.insert("b.weight", Tensor::new(vec![2, 2], vec![1.0f32, -2.0, 3.5, 0.25]));
        p.insert("a.bias", Tensor::new(vec![3], vec![0.0f32, 1e-7, -9.0]));
        let meta = CheckpointMeta {
            config: "seed = 1\n".into(),
            config_hash: "00".into(),
            variant: "BOTH".into(),
            channel_scale: 0.25,
            window: (-1000.0, 1000.0),
            seed: 1,
            epoch: 3,
            iteration: 15,
            val_mae: Some(12.5),
            tensors: vec![],
        };
        Checkpoint::new(meta, p)
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.meta, c.meta);
        for (name, t) in c.params.iter() {
            assert_eq!(back.params.get(name).unwrap(), t);
        }
        assert_eq!(back.meta.tensors[0].name, "a.bias");
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Corruption(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..20]), Err(Error::Corruption(_))));
    }
}
