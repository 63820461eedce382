use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::elf16::ConfigDigest;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FFNDESC\0";
const VERSION: u32 = 1;

/// Per-image feature vectors keyed by dataset image key, all produced under
/// one configuration digest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    digest: ConfigDigest,
    rows: BTreeMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn new(dim: usize, digest: ConfigDigest) -> Self {
        FeatureTable {
            dim,
            digest,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn digest(&self) -> ConfigDigest {
        self.digest
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let key = key.into();
        if values.len() != self.dim {
            return Err(Error::arg(format!(
                "feature for {key} has {} values, table dim is {}",
                values.len(),
                self.dim
            )));
        }
        self.rows.insert(key, values);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    /// Feature for `key` or a data error naming it.
    pub fn require(&self, key: &str) -> Result<&[f64]> {
        self.get(key)
            .ok_or_else(|| Error::Data(format!("no feature for image {key}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Refuses a table produced under a different configuration.
    pub fn expect_digest(&self, expected: ConfigDigest) -> Result<()> {
        if self.digest != expected {
            return Err(Error::Validation(format!(
                "feature digest {} does not match expected {}",
                self.digest, expected
            )));
        }
        Ok(())
    }

    /// Row-wise concatenation `[self | other]` over the shared keys.
    pub fn concat(&self, other: &FeatureTable) -> Result<FeatureTable> {
        let digest = ConfigDigest::combine(&[self.digest, other.digest]);
        let mut out = FeatureTable::new(self.dim + other.dim, digest);
        for (k, a) in &self.rows {
            let b = other
                .get(k)
                .ok_or_else(|| Error::Data(format!("no feature for image {k} in second table")))?;
            out.rows.insert(k.clone(), [a.as_slice(), b].concat());
        }
        Ok(out)
    }

    /// Binary layout: magic, version, dim, count, then per record the key
    /// length and bytes, the 8-byte digest and `dim` little-endian `f32`.
    /// Keys are written in sorted order so equal tables give equal bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.rows.len() * (16 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        for (k, v) in &self.rows {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&self.digest.0);
            for &x in v {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            origin,
        };
        if r.take(8)? != MAGIC {
            return Err(Error::format(origin, "not a descriptor file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported version {version}"),
            ));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut table: Option<FeatureTable> = None;
        for _ in 0..count {
            let len = r.u32()? as usize;
            let key = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(origin, "image key is not UTF-8"))?
                .to_string();
            let mut d = [0u8; 8];
            d.copy_from_slice(r.take(8)?);
            let digest = ConfigDigest(d);
            let t = table.get_or_insert_with(|| FeatureTable::new(dim, digest));
            if t.digest != digest {
                return Err(Error::Validation(format!(
                    "{}: record {key} has digest {digest}, file started with {}",
                    origin.display(),
                    t.digest
                )));
            }
            let values = r
                .take(4 * dim)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            t.rows.insert(key, values);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after last record"));
        }
        Ok(table.unwrap_or_else(|| FeatureTable::new(dim, ConfigDigest([0; 8]))))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        FeatureTable::from_bytes(&bytes, path)
    }

    /// Text mode: `key,digest,v0,v1,...` with full `f64` precision.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let digest = self.digest.to_hex();
        for (k, v) in &self.rows {
            let mut line = format!("{k},{digest}");
            for x in v {
                line.push(',');
                line.push_str(&format!("{x:?}"));
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut table: Option<FeatureTable> = None;
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
            if rec.len() < 2 {
                return Err(Error::format(path, "row lacks key and digest"));
            }
            let digest =
                ConfigDigest::from_hex(&rec[1]).map_err(|e| Error::format(path, e.to_string()))?;
            let values = rec
                .iter()
                .skip(2)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("row {}: {e}", &rec[0])))?;
            let t = table.get_or_insert_with(|| FeatureTable::new(values.len(), digest));
            if t.digest != digest {
                return Err(Error::Validation(format!(
                    "{}: row {} has digest {digest}, file started with {}",
                    path.display(),
                    &rec[0],
                    t.digest
                )));
            }
            t.insert(&rec[0], values)
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        table.ok_or_else(|| Error::format(path, "empty feature file"))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.origin, "truncated descriptor file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureTable {
        let mut t = FeatureTable::new(3, ConfigDigest::of_bytes(b"cfg"));
        t.insert("cam_a/1_0.png", vec![0.5, -1.25, 3.0]).unwrap();
        t.insert("cam_b/1_0.png", vec![0.0, 2.0, 1e-3]).unwrap();
        t
    }

    #[test]
    fn binary_round_trip_is_f32_exact() {
        let t = sample();
        let back = FeatureTable::from_bytes(&t.to_bytes(), Path::new("t")).unwrap();
        assert_eq!(back.dim(), 3);
        assert_eq!(back.digest(), t.digest());
        for (k, v) in t.iter() {
            let w = back.get(k).unwrap();
            for (a, b) in v.iter().zip(w) {
                assert_eq!(*a as f32 as f64, *b);
            }
        }
        assert_eq!(back.to_bytes(), t.to_bytes());
    }

    #[test]
    fn mixed_digests_are_refused() {
        let t = sample();
        let mut bytes = t.to_bytes();
        // Flip one byte of the second record's digest.
        let second = bytes.len() - (8 + 12);
        bytes[second] ^= 1;
        assert!(matches!(
            FeatureTable::from_bytes(&bytes, Path::new("t")),
            Err(Error::Validation(_))
        ));
        assert!(t.expect_digest(ConfigDigest::of_bytes(b"other")).is_err());
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(
            FeatureTable::from_bytes(cut, Path::new("t")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.csv");
        let t = sample();
        t.save_csv(&p).unwrap();
        assert_eq!(FeatureTable::load_csv(&p).unwrap(), t);
    }

    #[test]
    fn missing_key_names_the_image() {
        let err = sample().require("cam_a/9_0.png").unwrap_err();
        assert!(err.to_string().contains("cam_a/9_0.png"));
    }
}
