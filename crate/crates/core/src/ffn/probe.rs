use super::model::FfnModel;
use super::topology::ConcatOrder;
use crate::error::{Error, Result};
use crate::nn::gradcheck::Differentiable;
use crate::nn::{softmax_cross_entropy, Mode, Tensor};
use crate::rng::{stream, Purpose};

/// A model bound to a fixed batch, exposing every weight and bias block to
/// the gradient checker. Train-mode dropout replays the same mask on every
/// evaluation.
#[derive(Debug, Clone)]
pub struct FfnFragment {
    pub model: FfnModel,
    pub images: Tensor,
    pub descriptors: Tensor,
    pub labels: Vec<usize>,
    pub mode: Mode,
    pub dropout_seed: u64,
}

impl FfnFragment {
    fn mean_loss(&self) -> Result<(f64, Tensor, crate::ffn::Activations)> {
        let mut rng = stream(self.dropout_seed, Purpose::Dropout, 0);
        let acts = self
            .model
            .forward(&self.images, &self.descriptors, self.mode, &mut rng)?;
        let (loss, _, grad) = softmax_cross_entropy(&acts.logits, &self.labels)?;
        Ok((loss, grad, acts))
    }
}

impl Differentiable for FfnFragment {
    fn block_names(&self) -> Vec<String> {
        self.model
            .layer_names()
            .into_iter()
            .flat_map(|n| [format!("{n}.weights"), format!("{n}.bias")])
            .collect()
    }

    fn block(&self, index: usize) -> &[f64] {
        let layer = self.model.layers()[index / 2];
        if index % 2 == 0 {
            layer.weights.data()
        } else {
            layer.bias.data()
        }
    }

    fn block_mut(&mut self, index: usize) -> &mut [f64] {
        let layer = self
            .model
            .layers_mut()
            .into_iter()
            .nth(index / 2)
            .expect("block index");
        if index % 2 == 0 {
            layer.weights.data_mut()
        } else {
            layer.bias.data_mut()
        }
    }

    fn loss_and_gradients(&mut self) -> Result<(f64, Vec<Vec<f64>>)> {
        let (loss, grad, acts) = self.mean_loss()?;
        let n = self.labels.len() as f64;
        let grad = Tensor::new(
            grad.shape().to_vec(),
            grad.data().iter().map(|g| g / n).collect(),
        )?;
        self.model.zero_grads();
        self.model.backward(&acts, &grad)?;
        let grads = self
            .model
            .layers()
            .into_iter()
            .flat_map(|l| {
                [
                    l.grad_w().expect("backward allocates").data().to_vec(),
                    l.grad_b().expect("backward allocates").data().to_vec(),
                ]
            })
            .collect();
        Ok((loss, grads))
    }

    fn loss_and_region(&mut self) -> Result<(f64, u64)> {
        let (loss, _, acts) = self.mean_loss()?;
        Ok((loss, acts.region()))
    }
}

/// How far the CNN-side buffer gradient moves when only the hand-crafted
/// input changes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfluenceReport {
    /// `max |∂J/∂W⁷(x̃_a) − ∂J/∂W⁷(x̃_b)|`.
    pub grad_w7_max_diff: f64,
    /// Pathway (i): `max |W̃⁸ᵀã⁸(x̃_a) − W̃⁸ᵀã⁸(x̃_b)|`, the hand-crafted share
    /// of the fusion pre-activation `Z⁹`.
    pub fusion_input_max_diff: f64,
    /// Pathway (ii): `max |softmax(x̃_a) − softmax(x̃_b)|`, the forward change
    /// that shifts `δ¹⁰`.
    pub softmax_max_diff: f64,
    /// `max |δ⁹(x̃_a) − δ⁹(x̃_b)|`.
    pub delta9_max_diff: f64,
}

struct ProbeSide {
    grad_w7: Vec<f64>,
    hc_share: Vec<f64>,
    probs: Vec<f64>,
    delta9: Vec<f64>,
}

fn probe_side(
    model: &mut FfnModel,
    image: &Tensor,
    descriptor: &[f64],
    label: usize,
) -> Result<ProbeSide> {
    let desc = Tensor::new(vec![1, descriptor.len()], descriptor.to_vec())?;
    let mut rng = stream(model.rng_seed, Purpose::Dropout, 0);
    let acts = model.forward(image, &desc, Mode::Infer, &mut rng)?;
    let (_, probs, grad) = softmax_cross_entropy(&acts.logits, &[label])?;
    model.zero_grads();
    let delta9 = model.backward(&acts, &grad)?;
    let t = model.topology();
    let offset = match t.concat_order {
        ConcatOrder::HandcraftedFirst => 0,
        ConcatOrder::CnnFirst => t.cnn_buffer_dim,
    };
    let fusion_w = model.fusion.weights.data();
    let width = t.fusion_dim;
    let mut hc_share = vec![0.0; width];
    for (j, &a) in acts.a8_hc.data().iter().enumerate() {
        let row = &fusion_w[(offset + j) * width..(offset + j + 1) * width];
        for (s, w) in hc_share.iter_mut().zip(row) {
            *s += w * a;
        }
    }
    Ok(ProbeSide {
        grad_w7: model
            .buffer_cnn
            .grad_w()
            .expect("backward allocates")
            .data()
            .to_vec(),
        hc_share,
        probs: probs.into_data(),
        delta9: delta9.into_data(),
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Back-propagates one image under two hand-crafted descriptors with the
/// same label and dropout off, and reports how the CNN-side buffer gradient
/// and the two routes carrying `x̃` into it differ.
pub fn branch_influence_probe(
    model: &FfnModel,
    image: &[f64],
    descriptor_a: &[f64],
    descriptor_b: &[f64],
    label: usize,
) -> Result<InfluenceReport> {
    let t = model.topology();
    if descriptor_a.len() != t.handcrafted_dim || descriptor_b.len() != t.handcrafted_dim {
        return Err(Error::arg(
            "probe descriptors do not match the hand-crafted width",
        ));
    }
    if label >= t.num_classes {
        return Err(Error::arg(format!(
            "probe label {label} outside [0, {})",
            t.num_classes
        )));
    }
    let img = Tensor::new(
        vec![1, t.input_channels, t.input_height, t.input_width],
        image.to_vec(),
    )?;
    let mut scratch = model.clone();
    let a = probe_side(&mut scratch, &img, descriptor_a, label)?;
    let b = probe_side(&mut scratch, &img, descriptor_b, label)?;
    Ok(InfluenceReport {
        grad_w7_max_diff: max_diff(&a.grad_w7, &b.grad_w7),
        fusion_input_max_diff: max_diff(&a.hc_share, &b.hc_share),
        softmax_max_diff: max_diff(&a.probs, &b.probs),
        delta9_max_diff: max_diff(&a.delta9, &b.delta9),
    })
}
