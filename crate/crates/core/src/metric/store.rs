//! Metric model files.
//!
//! ```text
//! magic        8 bytes  "FFNMETR\0"
//! version      u32 LE   currently 1
//! header_len   u32 LE
//! header       UTF-8 TOML: kind, distance, dim, r, lfda hyperparameters
//! matrix       dim × r f64 LE, column-major (absent for identity models)
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BaseDistance, LfdaParams, MetricKind, MetricModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FFNMETR\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    kind: MetricKind,
    distance: BaseDistance,
    dim: usize,
    r: usize,
    has_projection: bool,
    lfda: Option<LfdaParams>,
}

impl MetricModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind,
            distance: self.distance,
            dim: self.dim,
            r: self.reduced_dim(),
            has_projection: self.projection.is_some(),
            lfda: self.lfda,
        };
        let text =
            toml::to_string(&header).map_err(|e| Error::arg(format!("metric header: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        if let Some(w) = &self.projection {
            for v in w.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: &str| Error::format(origin, m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a metric model (bad magic)"));
        }
        if u32::from_le_bytes(bytes[8..12].try_into().unwrap()) != VERSION {
            return Err(bad("unsupported metric model version"));
        }
        let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let text = bytes
            .get(16..16 + len)
            .ok_or_else(|| bad("truncated header"))?;
        let text = std::str::from_utf8(text).map_err(|_| bad("header is not UTF-8"))?;
        let h: Header = toml::from_str(text).map_err(|e| bad(&format!("header: {e}")))?;
        let body = &bytes[16 + len..];
        let projection = if h.has_projection {
            if body.len() != h.dim * h.r * 8 {
                return Err(bad("projection matrix has the wrong size"));
            }
            let vals: Vec<f64> = body
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Some(DMatrix::from_column_slice(h.dim, h.r, &vals))
        } else {
            if !body.is_empty() {
                return Err(bad("unexpected data after header"));
            }
            None
        };
        Ok(MetricModel {
            kind: h.kind,
            dim: h.dim,
            projection,
            distance: h.distance,
            lfda: h.lfda,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        MetricModel::from_bytes(&bytes, path)
    }
}
