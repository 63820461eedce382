use std::collections::{BTreeSet, VecDeque};
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::FfnModel;
use crate::error::{Error, Result};
use crate::nn::{sgd_step, softmax_cross_entropy, Mode, SgdConfig, Tensor};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardExamplePhase {
    pub enabled: bool,
    pub alpha: f64,
    pub iters: u64,
}

impl Default for HardExamplePhase {
    fn default() -> Self {
        HardExamplePhase {
            enabled: false,
            alpha: 1e-6,
            iters: 10_000,
        }
    }
}

/// Mini-batch SGD schedule. Defaults are the large-scale values; desk-scale
/// runs override them from config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub alpha: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    /// Last iteration to run (absolute, so resumed runs stop at the same
    /// point as uninterrupted ones).
    pub max_iters: u64,
    /// Stop once the mean loss of the last `loss_window` batches falls
    /// below this value. Zero disables the rule.
    pub target_loss: f64,
    pub loss_window: usize,
    pub hard_example: HardExamplePhase,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch_size: 25,
            alpha: 1e-5,
            weight_decay: 5e-4,
            decay_factor: 0.1,
            decay_every: 20_000,
            max_iters: 50_000,
            target_loss: 0.05,
            loss_window: 10,
            hard_example: HardExamplePhase::default(),
        }
    }
}

impl TrainSchedule {
    /// Values that train the toy topology from scratch in seconds.
    pub fn toy() -> Self {
        TrainSchedule {
            batch_size: 10,
            alpha: 0.2,
            weight_decay: 1e-4,
            decay_factor: 0.5,
            decay_every: 2000,
            max_iters: 5000,
            target_loss: 0.05,
            loss_window: 10,
            hard_example: HardExamplePhase {
                enabled: false,
                alpha: 0.05,
                iters: 300,
            },
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            alpha: self.alpha,
            lambda: self.weight_decay,
            batch_size: self.batch_size,
            decay_factor: self.decay_factor,
            decay_every: self.decay_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd().validate()?;
        if self.loss_window == 0 {
            return Err(Error::arg("loss_window must be at least 1"));
        }
        if !(self.target_loss >= 0.0) {
            return Err(Error::arg("target_loss must be non-negative"));
        }
        if !(self.hard_example.alpha >= 0.0) {
            return Err(Error::arg(
                "hard-example learning rate must be non-negative",
            ));
        }
        Ok(())
    }
}

/// Labelled training samples: images as `C×H×W` planes, descriptors and
/// dense class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    image_shape: [usize; 3],
    descriptor_dim: usize,
    images: Vec<f64>,
    descriptors: Vec<f64>,
    labels: Vec<usize>,
}

impl TrainingSet {
    pub fn new(image_shape: [usize; 3], descriptor_dim: usize) -> Self {
        TrainingSet {
            image_shape,
            descriptor_dim,
            images: Vec::new(),
            descriptors: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, image: &[f64], descriptor: &[f64], label: usize) -> Result<()> {
        if image.len() != self.image_shape.iter().product::<usize>() {
            return Err(Error::arg(format!(
                "image has {} values, expected {:?}",
                image.len(),
                self.image_shape
            )));
        }
        if descriptor.len() != self.descriptor_dim {
            return Err(Error::arg(format!(
                "descriptor has {} values, expected {}",
                descriptor.len(),
                self.descriptor_dim
            )));
        }
        self.images.extend_from_slice(image);
        self.descriptors.extend_from_slice(descriptor);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn descriptor_dim(&self) -> usize {
        self.descriptor_dim
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_shape.iter().product::<usize>();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.descriptors[i * self.descriptor_dim..(i + 1) * self.descriptor_dim]
    }

    /// Stacks the given samples into network inputs.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor, Vec<usize>) {
        let [c, h, w] = self.image_shape;
        let mut imgs = Vec::with_capacity(indices.len() * c * h * w);
        let mut descs = Vec::with_capacity(indices.len() * self.descriptor_dim);
        for &i in indices {
            imgs.extend_from_slice(self.image(i));
            descs.extend_from_slice(self.descriptor(i));
        }
        (
            Tensor::new(vec![indices.len(), c, h, w], imgs).expect("stacked images"),
            Tensor::new(vec![indices.len(), self.descriptor_dim], descs)
                .expect("stacked descriptors"),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Samples whose label is in `keep`, relabelled through `relabel`.
    pub fn subset(&self, keep: impl Fn(usize) -> Option<usize>) -> TrainingSet {
        let mut out = TrainingSet::new(self.image_shape, self.descriptor_dim);
        for i in 0..self.len() {
            if let Some(l) = keep(self.labels[i]) {
                out.push(self.image(i), self.descriptor(i), l)
                    .expect("same shapes");
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    TargetLoss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<LossRecord>,
    pub stop: StopReason,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.loss)
    }
}

fn check_labels(model: &FfnModel, data: &TrainingSet) -> Result<()> {
    let k = model.topology().num_classes;
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} outside [0, {k})")));
    }
    let [c, h, w] = data.image_shape();
    let t = model.topology();
    if [c, h, w] != [t.input_channels, t.input_height, t.input_width]
        || data.descriptor_dim() != t.handcrafted_dim
    {
        return Err(Error::Data(
            "training samples do not match the network input shape".into(),
        ));
    }
    Ok(())
}

/// Runs SGD iterations `model.iteration + 1 ..= last`. The learning rate at
/// iteration `t` is `sgd.learning_rate(t - lr_origin)`.
fn run_sgd(
    model: &mut FfnModel,
    data: &TrainingSet,
    sgd: SgdConfig,
    last: u64,
    lr_origin: u64,
    target_loss: f64,
    window: usize,
) -> Result<TrainReport> {
    sgd.validate()?;
    check_labels(model, data)?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let seed = model.rng_seed;
    let mut trace = Vec::new();
    let mut recent = VecDeque::with_capacity(window);
    let mut stop = StopReason::MaxIters;
    for t in model.iteration + 1..=last {
        let mut rng = stream(seed, Purpose::Batch, t);
        let idx: Vec<usize> = (0..sgd.batch_size)
            .map(|_| rng.gen_range(0..data.len()))
            .collect();
        let (imgs, descs, labels) = data.batch(&idx);
        let mut drop_rng = stream(seed, Purpose::Dropout, t);
        let acts = model.forward(&imgs, &descs, Mode::Train, &mut drop_rng)?;
        let (loss, _, grad) = softmax_cross_entropy(&acts.logits, &labels)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "loss diverged ({loss}) at iteration {t}"
            )));
        }
        model.zero_grads();
        model.backward(&acts, &grad)?;
        let lr = sgd.learning_rate(t - lr_origin);
        for layer in model.layers_mut() {
            sgd_step(layer, lr, sgd.lambda, sgd.batch_size);
        }
        model.iteration = t;
        trace.push(LossRecord {
            iteration: t,
            lr,
            loss,
        });
        if recent.len() == window {
            recent.pop_front();
        }
        recent.push_back(loss);
        if target_loss > 0.0
            && recent.len() == window
            && recent.iter().sum::<f64>() / (window as f64) < target_loss
        {
            stop = StopReason::TargetLoss;
            break;
        }
    }
    model.release_grads();
    Ok(TrainReport { trace, stop })
}

/// Mini-batch SGD from the model's current iteration up to
/// `schedule.max_iters`. Batches are drawn uniformly with replacement from
/// a per-iteration stream, so resuming from a checkpoint replays exactly
/// the batches of an uninterrupted run.
pub fn train(
    model: &mut FfnModel,
    data: &TrainingSet,
    schedule: &TrainSchedule,
) -> Result<TrainReport> {
    schedule.validate()?;
    run_sgd(
        model,
        data,
        schedule.sgd(),
        schedule.max_iters,
        0,
        schedule.target_loss,
        schedule.loss_window,
    )
}

/// Mean cross-entropy over the whole set in infer mode.
pub fn evaluate_loss(model: &FfnModel, data: &TrainingSet) -> Result<f64> {
    check_labels(model, data)?;
    let mut total = 0.0;
    for chunk in (0..data.len()).collect::<Vec<_>>().chunks(64) {
        let (imgs, descs, labels) = data.batch(chunk);
        let mut rng = stream(model.rng_seed, Purpose::Dropout, 0);
        let acts = model.forward(&imgs, &descs, Mode::Infer, &mut rng)?;
        total += softmax_cross_entropy(&acts.logits, &labels)?.0 * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Labels with at least one wrongly predicted sample, ascending.
pub fn misclassified_ids(model: &FfnModel, data: &TrainingSet) -> Result<Vec<usize>> {
    let mut wrong = BTreeSet::new();
    for chunk in (0..data.len()).collect::<Vec<_>>().chunks(64) {
        let (imgs, descs, labels) = data.batch(chunk);
        for (p, l) in model.predict(&imgs, &descs)?.into_iter().zip(labels) {
            if p != l {
                wrong.insert(l);
            }
        }
    }
    Ok(wrong.into_iter().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    /// Original label of each new classifier output.
    pub classes: Vec<usize>,
    pub report: TrainReport,
}

/// Hard-example phase: replaces the classifier with one output per
/// misclassified id and continues training on those ids' samples at the
/// phase's learning rate. All other layers are warm-started. An empty id
/// list leaves the model untouched and returns `None`.
pub fn hard_example_finetune(
    model: &mut FfnModel,
    data: &TrainingSet,
    misclassified: &[usize],
    schedule: &TrainSchedule,
) -> Result<Option<FinetuneReport>> {
    schedule.validate()?;
    let classes: Vec<usize> = misclassified
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if classes.is_empty() {
        log::info!("no misclassified identities; hard-example phase skipped");
        return Ok(None);
    }
    let subset = data.subset(|l| classes.binary_search(&l).ok());
    if subset.is_empty() {
        return Err(Error::Data(
            "misclassified ids have no training samples".into(),
        ));
    }
    model.replace_classifier(classes.len(), model.rng_seed)?;
    let sgd = SgdConfig {
        alpha: schedule.hard_example.alpha,
        ..schedule.sgd()
    };
    let start = model.iteration;
    let report = run_sgd(
        model,
        &subset,
        sgd,
        start + schedule.hard_example.iters,
        start,
        0.0,
        schedule.loss_window,
    )?;
    Ok(Some(FinetuneReport { classes, report }))
}

/// Writes `iteration,lr,loss` rows; appends when `append` is set.
pub fn write_loss_trace(path: &Path, trace: &[LossRecord], append: bool) -> Result<()> {
    let exists = path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut body = String::new();
    if !(append && exists) {
        body.push_str("iteration,lr,loss\n");
    }
    for r in trace {
        body.push_str(&format!("{},{:e},{:.17e}\n", r.iteration, r.lr, r.loss));
    }
    w.write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
