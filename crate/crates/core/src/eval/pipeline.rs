use rayon::prelude::*;

use super::bench::model_digest;
use super::dataset::{ImageRecord, ReidDataset};
use super::features::FeatureTable;
use crate::elf16::ConfigDigest;
use crate::error::{Error, Result};
use crate::ffn::{FfnModel, FfnTopology, TrainingSet};
use crate::imaging::{load_image, resize};
use crate::nn::Tensor;

/// Loads an image, resizes it to the network input and returns it as
/// `C×H×W` planes.
pub fn network_image(record: &ImageRecord, topology: &FfnTopology) -> Result<Vec<f64>> {
    let img = load_image(&record.path)?;
    if img.channels() != topology.input_channels {
        return Err(Error::Data(format!(
            "{} has {} channels, network takes {}",
            record.key,
            img.channels(),
            topology.input_channels
        )));
    }
    Ok(resize(&img, topology.input_height, topology.input_width)?.to_planar())
}

/// Every image of the dataset labelled by dense id, paired with its stored
/// descriptor.
pub fn dataset_training_set(
    dataset: &ReidDataset,
    descriptors: &FeatureTable,
    topology: &FfnTopology,
) -> Result<TrainingSet> {
    if descriptors.dim() != topology.handcrafted_dim {
        return Err(Error::Validation(format!(
            "descriptors are {}-D, network takes {}",
            descriptors.dim(),
            topology.handcrafted_dim
        )));
    }
    let images: Vec<Vec<f64>> = dataset
        .images
        .par_iter()
        .map(|r| network_image(r, topology))
        .collect::<Result<_>>()?;
    let mut set = TrainingSet::new(
        [
            topology.input_channels,
            topology.input_height,
            topology.input_width,
        ],
        descriptors.dim(),
    );
    for (r, img) in dataset.images.iter().zip(&images) {
        set.push(img, descriptors.require(&r.key)?, r.id)?;
    }
    Ok(set)
}

/// Fused and CNN-only feature tables computed from stored descriptors.
pub struct NetworkTables {
    pub fused: FeatureTable,
    pub cnn: FeatureTable,
}

pub fn network_tables(
    dataset: &ReidDataset,
    model: &FfnModel,
    descriptors: &FeatureTable,
) -> Result<NetworkTables> {
    let t = model.topology();
    if descriptors.dim() != t.handcrafted_dim {
        return Err(Error::Validation(format!(
            "descriptors are {}-D, network takes {}",
            descriptors.dim(),
            t.handcrafted_dim
        )));
    }
    let rows: Vec<(String, Vec<f64>, Vec<f64>)> = dataset
        .images
        .par_iter()
        .map(|r| {
            let img = Tensor::new(
                vec![1, t.input_channels, t.input_height, t.input_width],
                network_image(r, t)?,
            )?;
            let d = descriptors.require(&r.key)?;
            let desc = Tensor::new(vec![1, d.len()], d.to_vec())?;
            let fused = model.extract_features(&img, &desc)?.into_data();
            let cnn = model.extract_cnn_features(&img)?.into_data();
            Ok((r.key.clone(), fused, cnn))
        })
        .collect::<Result<_>>()?;
    let md = model_digest(model);
    let mut fused = FeatureTable::new(
        t.fusion_dim,
        ConfigDigest::combine(&[descriptors.digest(), md]),
    );
    let mut cnn = FeatureTable::new(
        t.cnn_feature_dim,
        ConfigDigest::combine(&[md, ConfigDigest::of_bytes(b"cnn")]),
    );
    for (k, f, c) in rows {
        fused.insert(k.clone(), f)?;
        cnn.insert(k, c)?;
    }
    Ok(NetworkTables { fused, cnn })
}
