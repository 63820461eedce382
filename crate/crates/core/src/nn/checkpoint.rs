//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "FFNCKPT\0"
//! version      u32      currently 1
//! header_len   u32      byte length of the TOML header
//! header       UTF-8 TOML (dtype, rng_seed, iteration, layers, meta)
//! blocks       for each header layer in order: weights then bias,
//!              each as product(shape) f64 values
//! ```
//!
//! The `meta` table carries caller-defined metadata, e.g. the topology.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{LayerState, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FFNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub weight_shape: Vec<usize>,
    pub bias_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub rng_seed: u64,
    pub iteration: u64,
    #[serde(default)]
    pub meta: toml::Table,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub rng_seed: u64,
    pub iteration: u64,
    pub meta: toml::Table,
    pub layers: Vec<(String, LayerState)>,
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            dtype: "f64".into(),
            rng_seed: self.rng_seed,
            iteration: self.iteration,
            meta: self.meta.clone(),
            layers: self
                .layers
                .iter()
                .map(|(name, l)| LayerEntry {
                    name: name.clone(),
                    weight_shape: l.weights.shape().to_vec(),
                    bias_shape: l.bias.shape().to_vec(),
                })
                .collect(),
        };
        let text =
            toml::to_string(&header).map_err(|e| Error::arg(format!("checkpoint header: {e}")))?;
        let params: usize = self.layers.iter().map(|(_, l)| l.param_count()).sum();
        let mut out = Vec::with_capacity(16 + text.len() + params * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for (_, l) in &self.layers {
            push_f64s(&mut out, l.weights.data());
            push_f64s(&mut out, l.bias.data());
        }
        Ok(out)
    }

    /// `origin` names the source in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(origin, m.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let text = bytes
            .get(16..16 + header_len)
            .ok_or_else(|| bad("truncated header"))?;
        let text = std::str::from_utf8(text).map_err(|_| bad("header is not UTF-8"))?;
        let header: CheckpointHeader =
            toml::from_str(text).map_err(|e| bad(&format!("header: {e}")))?;
        if header.dtype != "f64" {
            return Err(bad(&format!("unsupported dtype `{}`", header.dtype)));
        }
        let mut pos = 16 + header_len;
        let mut take = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let chunk = bytes
                .get(pos..pos + n * 8)
                .ok_or_else(|| bad("truncated parameter block"))?;
            pos += n * 8;
            let data = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::new(shape.to_vec(), data)
        };
        let mut layers = Vec::with_capacity(header.layers.len());
        for entry in &header.layers {
            let w = take(&entry.weight_shape)?;
            let b = take(&entry.bias_shape)?;
            layers.push((entry.name.clone(), LayerState::new(w, b)));
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes after parameter blocks"));
        }
        Ok(Checkpoint {
            rng_seed: header.rng_seed,
            iteration: header.iteration,
            meta: header.meta,
            layers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn sample() -> Checkpoint {
        let mut rng = stream(3, Purpose::Init, 0);
        let mut meta = toml::Table::new();
        meta.insert("note".into(), toml::Value::String("x".into()));
        Checkpoint {
            rng_seed: 3,
            iteration: 42,
            meta,
            layers: vec![
                (
                    "conv1".into(),
                    LayerState::gaussian(&[2, 1, 3, 3], 2, 1.0, &mut rng),
                ),
                (
                    "fc".into(),
                    LayerState::gaussian(&[5, 4], 4, 1e-300, &mut rng),
                ),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = sample().to_bytes().unwrap();
        for broken in [
            &bytes[..10],
            &bytes[..bytes.len() - 1],
            b"NOTACKPT\x01\0\0\0\0\0\0\0".as_slice(),
        ] {
            assert!(matches!(
                Checkpoint::from_bytes(broken, Path::new("mem")),
                Err(Error::Format { .. })
            ));
        }
    }
}
