use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

/// Camera view. View 1 supplies the gallery, view 2 the probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum View {
    One,
    Two,
}

impl View {
    fn parse(s: &str) -> Option<View> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "a" | "cam_a" | "view1" => Some(View::One),
            "2" | "b" | "cam_b" | "view2" => Some(View::Two),
            _ => None,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            View::One => "1",
            View::Two => "2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    /// Dense identity index.
    pub id: usize,
    pub view: View,
    /// Position among this identity's images in this view.
    pub index: usize,
    pub path: PathBuf,
    /// Path relative to the dataset root with `/` separators; the key that
    /// binds features to images.
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    /// `cam_a/` (view 1) and `cam_b/` (view 2) holding `<id>_<idx>.png|bmp`.
    TwoDir,
    /// CSV with columns `path,id,view`, paths relative to the root.
    Manifest(PathBuf),
}

/// A two-view re-identification dataset with dense identity indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReidDataset {
    /// Original identity names; position is the dense index.
    pub identities: Vec<String>,
    pub images: Vec<ImageRecord>,
}

/// Numbers compare numerically and sort before other names.
pub(crate) fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

struct RawRecord {
    name: String,
    view: View,
    key: String,
}

fn key_of(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn scan_view(root: &Path, dir: &str, view: View, out: &mut Vec<RawRecord>) -> Result<()> {
    let path = root.join(dir);
    let entries = std::fs::read_dir(&path).map_err(|e| Error::io(&path, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&path, e))?;
        let file = entry.path();
        let ext = file
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png" | "bmp")) {
            continue;
        }
        let stem = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let Some((name, _)) = stem.rsplit_once('_') else {
            return Err(Error::format(&file, "file name is not <id>_<idx>"));
        };
        if name.is_empty() {
            return Err(Error::format(&file, "empty identity in file name"));
        }
        out.push(RawRecord {
            name: name.to_string(),
            view,
            key: key_of(root, &file),
        });
    }
    Ok(())
}

fn read_manifest(root: &Path, manifest: &Path, out: &mut Vec<RawRecord>) -> Result<()> {
    let path = if manifest.is_absolute() {
        manifest.to_path_buf()
    } else {
        root.join(manifest)
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| Error::format(&path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(&path, e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::format(&path, format!("manifest lacks a `{name}` column")))
    };
    let (pc, ic, vc) = (col("path")?, col("id")?, col("view")?);
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(&path, e.to_string()))?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let view = View::parse(field(vc)).ok_or_else(|| {
            Error::format(
                &path,
                format!("row {}: unknown view `{}`", line + 2, field(vc)),
            )
        })?;
        let file = root.join(field(pc));
        if !file.is_file() {
            return Err(Error::Validation(format!(
                "manifest row {} names missing image {}",
                line + 2,
                file.display()
            )));
        }
        out.push(RawRecord {
            name: field(ic).to_string(),
            view,
            key: key_of(root, &file),
        });
    }
    Ok(())
}

/// Loads and validates a dataset. Every identity must appear in both views.
pub fn load_dataset(root: &Path, layout: &Layout) -> Result<ReidDataset> {
    let mut raw = Vec::new();
    match layout {
        Layout::TwoDir => {
            scan_view(root, "cam_a", View::One, &mut raw)?;
            scan_view(root, "cam_b", View::Two, &mut raw)?;
        }
        Layout::Manifest(m) => read_manifest(root, m, &mut raw)?,
    }
    let mut views: BTreeMap<&str, BTreeSet<View>> = BTreeMap::new();
    for r in &raw {
        views.entry(&r.name).or_default().insert(r.view);
    }
    let mut offenders: Vec<&str> = views
        .iter()
        .filter(|(_, v)| v.len() != 2)
        .map(|(n, _)| *n)
        .collect();
    if !offenders.is_empty() {
        offenders.sort_by(|a, b| natural_cmp(a, b));
        return Err(Error::Validation(format!(
            "identities missing from one view: {}",
            offenders.join(", ")
        )));
    }
    if views.is_empty() {
        return Err(Error::Validation(format!(
            "no images found under {}",
            root.display()
        )));
    }
    let mut identities: Vec<String> = views.keys().map(|s| s.to_string()).collect();
    identities.sort_by(|a, b| natural_cmp(a, b));
    let dense: BTreeMap<&str, usize> = identities
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut keyed: Vec<(usize, View, String)> = raw
        .iter()
        .map(|r| (dense[r.name.as_str()], r.view, r.key.clone()))
        .collect();
    keyed.sort_by(|a, b| {
        (a.0, a.1)
            .cmp(&(b.0, b.1))
            .then_with(|| natural_key_cmp(&a.2, &b.2))
    });
    let mut seen = BTreeSet::new();
    let mut images = Vec::with_capacity(keyed.len());
    let mut prev: Option<(usize, View)> = None;
    let mut index = 0;
    for (id, view, key) in keyed {
        if !seen.insert(key.clone()) {
            return Err(Error::Validation(format!("image {key} listed twice")));
        }
        index = if prev == Some((id, view)) {
            index + 1
        } else {
            0
        };
        prev = Some((id, view));
        images.push(ImageRecord {
            id,
            view,
            index,
            path: root.join(&key),
            key,
        });
    }
    Ok(ReidDataset { identities, images })
}

/// Orders keys by their digit runs numerically so `x_2` precedes `x_10`.
fn natural_key_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for (x, y) in ca.iter().zip(&cb) {
        let ord = match (x, y) {
            ((true, p), (true, q)) => natural_cmp(p, q),
            ((_, p), (_, q)) => p.cmp(q),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then_with(|| a.cmp(b))
}

impl ReidDataset {
    pub fn num_ids(&self) -> usize {
        self.identities.len()
    }

    pub fn images_of(&self, id: usize, view: View) -> impl Iterator<Item = &ImageRecord> {
        self.images
            .iter()
            .filter(move |r| r.id == id && r.view == view)
    }

    /// Writes `dense_id,id` rows.
    pub fn write_id_map(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_record(["dense_id", "id"])
            .map_err(|e| Error::format(path, e.to_string()))?;
        for (i, name) in self.identities.iter().enumerate() {
            w.write_record([i.to_string(), name.clone()])
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub seed: u64,
    /// Dense ids, ascending.
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Seeded shuffle of the identities; the first `⌊n/2⌋` train.
pub fn make_split(num_ids: usize, seed: u64) -> Result<SplitPlan> {
    if num_ids < 2 {
        return Err(Error::arg("a split needs at least two identities"));
    }
    let mut ids: Vec<usize> = (0..num_ids).collect();
    ids.shuffle(&mut stream(seed, Purpose::Split, 0));
    let half = num_ids / 2;
    let mut train_ids = ids[..half].to_vec();
    let mut test_ids = ids[half..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(SplitPlan {
        seed,
        train_ids,
        test_ids,
    })
}
