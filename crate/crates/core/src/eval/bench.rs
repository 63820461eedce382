use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::dataset::ReidDataset;
use super::features::FeatureTable;
use crate::elf16::{ConfigDigest, Elf16Extractor};
use crate::error::{Error, Result};
use crate::ffn::FfnModel;
use crate::imaging::{load_image, resize, ImageTensor};
use crate::nn::Tensor;

/// Maps one image to a fixed-length feature vector.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Identifies the configuration (and weights) behind the features.
    fn digest(&self) -> ConfigDigest;

    fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>>;
}

/// ELF16 after an optional resize.
pub struct Elf16Features {
    extractor: Elf16Extractor,
    resize: Option<(usize, usize)>,
}

impl Elf16Features {
    pub fn new(extractor: Elf16Extractor, resize: Option<(usize, usize)>) -> Self {
        Elf16Features { extractor, resize }
    }

    pub fn extractor(&self) -> &Elf16Extractor {
        &self.extractor
    }
}

fn resize_digest(resize: Option<(usize, usize)>) -> ConfigDigest {
    let (h, w) = resize.unwrap_or((0, 0));
    ConfigDigest::of_bytes(format!("resize {h}x{w}").as_bytes())
}

impl FeatureExtractor for Elf16Features {
    fn name(&self) -> &str {
        "elf16"
    }

    fn dim(&self) -> usize {
        self.extractor.descriptor_dim()
    }

    fn digest(&self) -> ConfigDigest {
        ConfigDigest::combine(&[self.extractor.digest(), resize_digest(self.resize)])
    }

    fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let v = match self.resize {
            Some((h, w)) => self.extractor.extract(&resize(image, h, w)?)?,
            None => self.extractor.extract(image)?,
        };
        Ok(v.values)
    }
}

/// Digest of a model's topology and every parameter.
pub fn model_digest(model: &FfnModel) -> ConfigDigest {
    let mut h = Sha256::new();
    h.update(
        toml::to_string(model.topology())
            .unwrap_or_default()
            .as_bytes(),
    );
    for layer in model.layers() {
        for v in layer.weights.data().iter().chain(layer.bias.data()) {
            h.update(v.to_le_bytes());
        }
    }
    let full = h.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&full[..8]);
    ConfigDigest(out)
}

fn network_input(model: &FfnModel, image: &ImageTensor) -> Result<Tensor> {
    let t = model.topology();
    if image.channels() != t.input_channels {
        return Err(Error::arg(format!(
            "network takes {}-channel images, got {}",
            t.input_channels,
            image.channels()
        )));
    }
    let img = resize(image, t.input_height, t.input_width)?;
    Tensor::new(
        vec![1, t.input_channels, t.input_height, t.input_width],
        img.to_planar(),
    )
}

/// What a network-backed extractor returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkOutput {
    /// Fused features with a fixed all-zero descriptor: the network forward
    /// pass alone, without descriptor extraction.
    ForwardOnly,
    /// CNN features `x` (the network-only baseline).
    CnnFc,
}

pub struct NetworkFeatures {
    model: Arc<FfnModel>,
    output: NetworkOutput,
    digest: ConfigDigest,
}

impl NetworkFeatures {
    pub fn new(model: Arc<FfnModel>, output: NetworkOutput) -> Self {
        let tag = ConfigDigest::of_bytes(format!("{output:?}").as_bytes());
        let digest = ConfigDigest::combine(&[model_digest(&model), tag]);
        NetworkFeatures {
            model,
            output,
            digest,
        }
    }
}

impl FeatureExtractor for NetworkFeatures {
    fn name(&self) -> &str {
        match self.output {
            NetworkOutput::ForwardOnly => "network-forward",
            NetworkOutput::CnnFc => "cnn-fc",
        }
    }

    fn dim(&self) -> usize {
        let t = self.model.topology();
        match self.output {
            NetworkOutput::ForwardOnly => t.fusion_dim,
            NetworkOutput::CnnFc => t.cnn_feature_dim,
        }
    }

    fn digest(&self) -> ConfigDigest {
        self.digest
    }

    fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let input = network_input(&self.model, image)?;
        match self.output {
            NetworkOutput::ForwardOnly => {
                let desc = Tensor::zeros(&[1, self.model.topology().handcrafted_dim]);
                Ok(self.model.extract_features(&input, &desc)?.into_data())
            }
            NetworkOutput::CnnFc => Ok(self.model.extract_cnn_features(&input)?.into_data()),
        }
    }
}

/// ELF16 extraction followed by a fused forward pass.
pub struct FusedFeatures {
    elf: Elf16Features,
    model: Arc<FfnModel>,
    digest: ConfigDigest,
}

impl FusedFeatures {
    pub fn new(elf: Elf16Features, model: Arc<FfnModel>) -> Result<Self> {
        let hc = model.topology().handcrafted_dim;
        if elf.dim() != hc {
            return Err(Error::Validation(format!(
                "ELF16 dim {} does not match the network's hand-crafted input {hc}",
                elf.dim()
            )));
        }
        let digest = ConfigDigest::combine(&[elf.digest(), model_digest(&model)]);
        Ok(FusedFeatures { elf, model, digest })
    }
}

impl FeatureExtractor for FusedFeatures {
    fn name(&self) -> &str {
        "fused"
    }

    fn dim(&self) -> usize {
        self.model.topology().fusion_dim
    }

    fn digest(&self) -> ConfigDigest {
        self.digest
    }

    fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let desc = self.elf.extract(image)?;
        let input = network_input(&self.model, image)?;
        let desc = Tensor::new(vec![1, desc.len()], desc)?;
        Ok(self.model.extract_features(&input, &desc)?.into_data())
    }
}

fn checked(extractor: &dyn FeatureExtractor, image: &ImageTensor) -> Result<Vec<f64>> {
    let v = extractor.extract(image)?;
    if v.len() != extractor.dim() {
        return Err(Error::Validation(format!(
            "{} reports dim {} but produced {} values",
            extractor.name(),
            extractor.dim(),
            v.len()
        )));
    }
    Ok(v)
}

/// Extracts features for every dataset image, in parallel.
pub fn extract_table(
    dataset: &ReidDataset,
    extractor: &dyn FeatureExtractor,
) -> Result<FeatureTable> {
    let rows: Vec<(String, Vec<f64>)> = dataset
        .images
        .par_iter()
        .map(|r| Ok((r.key.clone(), checked(extractor, &load_image(&r.path)?)?)))
        .collect::<Result<_>>()?;
    let mut table = FeatureTable::new(extractor.dim(), extractor.digest());
    for (k, v) in rows {
        table.insert(k, v)?;
    }
    Ok(table)
}

/// Minimum number of images for a warm timing run.
pub const MIN_TIMING_IMAGES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub name: String,
    /// Extractor-reported dimension, checked against every output.
    pub dim: usize,
    /// Median over repeats of the mean seconds per image.
    pub seconds_per_image: f64,
    pub images: usize,
}

/// Single-threaded wall time per image for each extractor. One untimed pass
/// over the first image warms caches; each repeat then times the full set.
pub fn benchmark_timing(
    extractors: &[&dyn FeatureExtractor],
    images: &[ImageTensor],
    repeats: usize,
) -> Result<Vec<TimingRow>> {
    if images.len() < MIN_TIMING_IMAGES {
        return Err(Error::arg(format!(
            "timing needs at least {MIN_TIMING_IMAGES} images, got {}",
            images.len()
        )));
    }
    let repeats = repeats.max(1);
    extractors
        .iter()
        .map(|&e| {
            checked(e, &images[0])?;
            let mut means = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let start = Instant::now();
                for img in images {
                    std::hint::black_box(checked(e, img)?);
                }
                means.push(start.elapsed().as_secs_f64() / images.len() as f64);
            }
            means.sort_by(f64::total_cmp);
            Ok(TimingRow {
                name: e.name().to_string(),
                dim: e.dim(),
                seconds_per_image: means[means.len() / 2],
                images: images.len(),
            })
        })
        .collect()
}

/// `extractor,dim,seconds_per_image,images` rows.
pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut s = String::from("extractor,dim,seconds_per_image,images\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.6},{}\n",
            r.name, r.dim, r.seconds_per_image, r.images
        ));
    }
    s
}
