//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use ffn_core::elf16::Elf16Config;
use ffn_core::eval::Layout;
use ffn_core::ffn::{FfnTopology, TrainSchedule};
use ffn_core::metric::{LfdaParams, MetricKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Base network and schedule that `[network]` and `[train]` override.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Toy,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    #[default]
    TwoDir,
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    #[serde(default)]
    pub layout: LayoutKind,
    /// Manifest CSV, relative to `root` unless absolute.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

impl DatasetConfig {
    pub fn layout(&self) -> Result<Layout, CliError> {
        match (self.layout, &self.manifest) {
            (LayoutKind::TwoDir, _) => Ok(Layout::TwoDir),
            (LayoutKind::Manifest, Some(m)) => Ok(Layout::Manifest(m.clone())),
            (LayoutKind::Manifest, None) => Err(CliError::Usage("manifest layout needs `manifest = <csv>`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// `[height, width]` images are resized to before ELF16; unset keeps
    /// the native size.
    pub elf16_resize: Option<[usize; 2]>,
    /// Also write a CSV copy of every descriptor file.
    pub csv: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            elf16_resize: None,
            csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub trials: usize,
    /// Feature tables to evaluate: `elf16`, `fused`, `cnn`.
    pub features: Vec<String>,
    pub metrics: Vec<MetricKind>,
    /// Last rank drawn in the SVG plot.
    pub plot_max_rank: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            trials: 10,
            features: vec!["elf16".into(), "fused".into()],
            metrics: vec![MetricKind::L1],
            plot_max_rank: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub classes: usize,
    /// Initial weight scale of probe models; larger than the training
    /// default so activations sit away from ReLU kinks.
    pub init_std: f64,
    pub grad_tolerance: f64,
    pub grad_seeds: u64,
    pub grad_batch: usize,
    /// Random entries checked per parameter block; unset checks them all.
    pub entries_per_block: Option<usize>,
    pub probe_seeds: u64,
    pub probe_min_positive: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            classes: 10,
            init_std: 0.1,
            grad_tolerance: 1e-4,
            grad_seeds: 3,
            grad_batch: 2,
            entries_per_block: Some(30),
            probe_seeds: 10,
            probe_min_positive: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub images: usize,
    pub repeats: usize,
    /// Size of the generated images used when no dataset is configured.
    pub synthetic_size: [usize; 2],
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            images: 10,
            repeats: 3,
            synthetic_size: [128, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub topology: Preset,
    pub out_dir: PathBuf,
    /// Evaluation dataset.
    pub dataset: Option<DatasetConfig>,
    /// Network training dataset; defaults to `dataset`.
    pub train_dataset: Option<DatasetConfig>,
    /// Model checkpoint; defaults to `<out_dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
    /// Continue training from the checkpoint when it exists.
    pub resume: bool,
    pub elf16: Elf16Config,
    pub features: FeatureConfig,
    /// Field overrides applied to the preset topology.
    pub network: toml::Table,
    /// Field overrides applied to the preset schedule.
    pub train: toml::Table,
    pub eval: EvalConfig,
    pub lfda: LfdaParams,
    pub verify: VerifyConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            topology: Preset::Toy,
            out_dir: PathBuf::from("out"),
            dataset: None,
            train_dataset: None,
            checkpoint: None,
            resume: false,
            elf16: Elf16Config::default(),
            features: FeatureConfig::default(),
            network: toml::Table::new(),
            train: toml::Table::new(),
            eval: EvalConfig::default(),
            lfda: LfdaParams::default(),
            verify: VerifyConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

/// Recursively replaces `base` entries with those of `over`.
fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, over: &toml::Table, section: &str) -> Result<T, CliError> {
    let mut table = toml::Table::try_from(base).map_err(|e| CliError::Usage(format!("[{section}]: {e}")))?;
    merge(&mut table, over);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::Usage(format!("[{section}]: {e}")))
}

impl RunConfig {
    /// Parses a config file; relative paths inside resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for d in [&mut self.dataset, &mut self.train_dataset].into_iter().flatten() {
            fix(&mut d.root);
        }
        if let Some(c) = &mut self.checkpoint {
            fix(c);
        }
    }

    /// Checks everything that does not need the data itself.
    pub fn validate(&self) -> Result<(), CliError> {
        self.elf16.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        for d in [&self.dataset, &self.train_dataset].into_iter().flatten() {
            if !d.root.is_dir() {
                return Err(CliError::Usage(format!("dataset root {} does not exist", d.root.display())));
            }
            d.layout()?;
        }
        if self.eval.trials == 0 {
            return Err(CliError::Usage("eval.trials must be at least 1".into()));
        }
        for f in &self.eval.features {
            if !matches!(f.as_str(), "elf16" | "fused" | "cnn") {
                return Err(CliError::Usage(format!("unknown feature `{f}`; expected elf16, fused or cnn")));
            }
        }
        if let Some([h, w]) = self.features.elf16_resize {
            if h == 0 || w == 0 {
                return Err(CliError::Usage("features.elf16_resize must be positive".into()));
            }
        }
        self.schedule()?.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    pub fn features_dir(&self) -> PathBuf {
        self.out_dir.join("features")
    }

    pub fn elf16_resize(&self) -> Option<(usize, usize)> {
        self.features.elf16_resize.map(|[h, w]| (h, w))
    }

    /// Preset topology for the given input width and class count, with the
    /// `[network]` overrides applied.
    pub fn topology(&self, handcrafted_dim: usize, num_classes: usize) -> Result<FfnTopology, CliError> {
        let base = match self.topology {
            Preset::Toy => FfnTopology::toy(handcrafted_dim, num_classes),
            Preset::Paper => FfnTopology::paper(handcrafted_dim, num_classes),
        };
        let t = overlay(&base, &self.network, "network")?;
        t.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(t)
    }

    pub fn schedule(&self) -> Result<TrainSchedule, CliError> {
        let base = match self.topology {
            Preset::Toy => TrainSchedule::toy(),
            Preset::Paper => TrainSchedule::default(),
        };
        overlay(&base, &self.train, "train")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(toml::from_str::<RunConfig>("").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_touch_only_named_fields() {
        let cfg: RunConfig = toml::from_str(
            "topology = \"toy\"\n[network]\nfusion_dim = 32\n[train]\nalpha = 0.5\n[train.hard_example]\nenabled = true\n",
        )
        .unwrap();
        let t = cfg.topology(100, 7).unwrap();
        assert_eq!(t.fusion_dim, 32);
        assert_eq!(t.cnn_buffer_dim, 64);
        assert_eq!((t.handcrafted_dim, t.num_classes), (100, 7));
        let s = cfg.schedule().unwrap();
        assert_eq!(s.alpha, 0.5);
        assert!(s.hard_example.enabled);
        assert_eq!(s.hard_example.iters, TrainSchedule::toy().hard_example.iters);
        assert_eq!(s.batch_size, TrainSchedule::toy().batch_size);
    }

    #[test]
    fn paper_preset_uses_large_scale_schedule() {
        let cfg = RunConfig {
            topology: Preset::Paper,
            ..RunConfig::default()
        };
        assert_eq!(cfg.schedule().unwrap(), TrainSchedule::default());
        assert_eq!(cfg.topology(10240, 100).unwrap().fusion_dim, 4096);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
        let cfg: RunConfig = toml::from_str("[train]\nalpah = 1.0").unwrap();
        assert!(cfg.schedule().is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "out_dir = \"o\"\n[dataset]\nroot = \"d\"\n").unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.out_dir, dir.path().join("o"));
        assert_eq!(cfg.dataset.unwrap().root, dir.path().join("d"));
    }
}
