//! Central finite-difference gradient checking.

use rand::seq::index::sample;

use super::layers::{fc_backward, fc_forward};
use super::loss::softmax_cross_entropy;
use super::tensor::{LayerState, Tensor};
use crate::error::Result;
use crate::rng::{stream, Purpose};

/// A network fragment with its input and target bound, exposing its
/// parameters as named flat blocks.
pub trait Differentiable {
    fn block_names(&self) -> Vec<String>;

    fn block(&self, index: usize) -> &[f64];

    fn block_mut(&mut self, index: usize) -> &mut [f64];

    /// Loss and analytic gradients, one vector per block.
    fn loss_and_gradients(&mut self) -> Result<(f64, Vec<Vec<f64>>)>;

    /// Loss plus a fingerprint of the active piecewise-linear region
    /// (ReLU signs, pooling winners). Two evaluations with different
    /// fingerprints straddle a non-differentiable point.
    fn loss_and_region(&mut self) -> Result<(f64, u64)>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Relative error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many entries per block, chosen at random.
    pub max_entries_per_block: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-6,
            max_entries_per_block: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: String,
    pub checked: usize,
    /// Entries whose perturbation crossed a kink and were excluded.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst_block(&self) -> Option<&BlockReport> {
        self.blocks
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.blocks
            .iter()
            .all(|b| b.max_rel_error < tolerance && b.checked > 0)
    }
}

pub fn grad_check(
    net: &mut dyn Differentiable,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, analytic) = net.loss_and_gradients()?;
    let (_, base_region) = net.loss_and_region()?;
    let names = net.block_names();
    let mut rng = stream(opts.seed, Purpose::Probe, 0);
    let mut blocks = Vec::with_capacity(names.len());
    for (b, name) in names.into_iter().enumerate() {
        let len = net.block(b).len();
        let indices: Vec<usize> = match opts.max_entries_per_block {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut report = BlockReport {
            name,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst_index: None,
        };
        for i in indices {
            let orig = net.block(b)[i];
            net.block_mut(b)[i] = orig + opts.step;
            let (up, region_up) = net.loss_and_region()?;
            net.block_mut(b)[i] = orig - opts.step;
            let (down, region_down) = net.loss_and_region()?;
            net.block_mut(b)[i] = orig;
            if region_up != base_region || region_down != base_region {
                report.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[b][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_index.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst_index = Some(i);
            }
        }
        blocks.push(report);
    }
    Ok(GradCheckReport { blocks })
}

/// A single fully connected layer feeding softmax cross-entropy.
#[derive(Debug, Clone)]
pub struct FcFragment {
    pub layer: LayerState,
    pub input: Tensor,
    pub labels: Vec<usize>,
}

impl Differentiable for FcFragment {
    fn block_names(&self) -> Vec<String> {
        vec!["fc.weights".into(), "fc.bias".into()]
    }

    fn block(&self, index: usize) -> &[f64] {
        match index {
            0 => self.layer.weights.data(),
            _ => self.layer.bias.data(),
        }
    }

    fn block_mut(&mut self, index: usize) -> &mut [f64] {
        match index {
            0 => self.layer.weights.data_mut(),
            _ => self.layer.bias.data_mut(),
        }
    }

    fn loss_and_gradients(&mut self) -> Result<(f64, Vec<Vec<f64>>)> {
        self.layer.zero_grads();
        let logits = fc_forward(&self.input, &self.layer)?;
        let (loss, _, grad) = softmax_cross_entropy(&logits, &self.labels)?;
        let n = self.labels.len() as f64;
        // gradient of the mean loss
        let grad = Tensor::new(
            grad.shape().to_vec(),
            grad.data().iter().map(|g| g / n).collect(),
        )?;
        fc_backward(&self.input, &grad, &mut self.layer)?;
        let gw = self.layer.grad_w().expect("allocated").data().to_vec();
        let gb = self.layer.grad_b().expect("allocated").data().to_vec();
        Ok((loss, vec![gw, gb]))
    }

    fn loss_and_region(&mut self) -> Result<(f64, u64)> {
        let logits = fc_forward(&self.input, &self.layer)?;
        let (loss, _, _) = softmax_cross_entropy(&logits, &self.labels)?;
        Ok((loss, 0))
    }
}

/// Hashes a sequence of booleans/indices into a region fingerprint.
#[derive(Debug, Default)]
pub struct RegionHasher(u64);

impl RegionHasher {
    pub fn push(&mut self, v: u64) {
        // FNV-1a over the 8 bytes
        let mut h = if self.0 == 0 {
            0xcbf2_9ce4_8422_2325
        } else {
            self.0
        };
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        self.0 = h;
    }

    pub fn push_signs(&mut self, values: &[f64]) {
        let mut word = 0u64;
        for (i, &v) in values.iter().enumerate() {
            if v > 0.0 {
                word |= 1 << (i % 64);
            }
            if i % 64 == 63 {
                self.push(word);
                word = 0;
            }
        }
        self.push(word);
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}
