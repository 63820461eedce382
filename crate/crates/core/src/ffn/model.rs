use std::path::Path;

use super::topology::{
    conv_layer_name, ConcatOrder, FfnTopology, NormOrder, BUFFER_CNN, BUFFER_HC, CLASSIFIER,
    CNN_FC, FUSION,
};
use crate::error::{Error, Result};
use crate::nn::gradcheck::RegionHasher;
use crate::nn::layers::{
    conv2d_backward, conv2d_backward_params, conv2d_forward, dropout_backward, dropout_forward,
    fc_backward, fc_backward_params, fc_forward, lrn_backward, lrn_forward, maxpool_backward,
    maxpool_forward, relu_backward, relu_forward,
};
use crate::nn::{Checkpoint, ConvParams, LayerState, Mode, Tensor};
use crate::rng::{stream, Purpose, Rng};

/// The two-branch fusion network.
///
/// Layer numbering follows the usual back-propagation analysis of the
/// network head: `x` is the CNN feature, layer 7 holds the buffer weights
/// `W⁷` (CNN side) and `W̃⁷` (hand-crafted side) producing `a⁸`, `ã⁸`;
/// layer 8 is the fusion layer with weights `[W̃⁸; W⁸]` producing `Z⁹`;
/// layer 9 is the classifier producing `Z¹⁰`, the softmax input.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnModel {
    topology: FfnTopology,
    pub conv: Vec<LayerState>,
    pub cnn_fc: LayerState,
    pub buffer_cnn: LayerState,
    pub buffer_hc: LayerState,
    pub fusion: LayerState,
    pub classifier: LayerState,
    pub rng_seed: u64,
    pub iteration: u64,
}

#[derive(Debug, Clone)]
enum OpCache {
    Conv {
        stage: usize,
        input: Tensor,
    },
    Relu {
        input: Tensor,
    },
    Pool {
        input_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Lrn {
        input: Tensor,
    },
}

/// Every intermediate of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    ops: Vec<OpCache>,
    conv_out_shape: Vec<usize>,
    pub flat: Tensor,
    pub z_fc: Tensor,
    /// CNN features `x`.
    pub x: Tensor,
    /// Hand-crafted features `x̃`.
    pub x_hc: Tensor,
    /// Buffer pre-activations `Z⁸` and `Z̃⁸`.
    pub z8: Tensor,
    pub z8_hc: Tensor,
    /// Buffer outputs after ReLU and dropout, `a⁸` and `ã⁸`.
    pub a8: Tensor,
    pub a8_hc: Tensor,
    mask8: Option<Vec<f64>>,
    mask8_hc: Option<Vec<f64>>,
    pub concat: Tensor,
    /// Fusion pre-activation `Z⁹`.
    pub z9: Tensor,
    /// Fused feature after ReLU, before dropout.
    pub fused: Tensor,
    mask9: Option<Vec<f64>>,
    fused_dropped: Tensor,
    /// Classifier output `Z¹⁰`.
    pub logits: Tensor,
}

impl Activations {
    /// Fingerprint of every ReLU sign pattern and pooling winner.
    pub fn region(&self) -> u64 {
        let mut h = RegionHasher::default();
        for op in &self.ops {
            match op {
                OpCache::Relu { input } => h.push_signs(input.data()),
                OpCache::Pool { argmax, .. } => argmax.iter().for_each(|&i| h.push(i as u64)),
                _ => {}
            }
        }
        for t in [&self.z_fc, &self.z8, &self.z8_hc, &self.z9] {
            h.push_signs(t.data());
        }
        h.finish()
    }
}

fn dropout_mask(
    input: &Tensor,
    ratio: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    dropout_forward(input, ratio, mode, rng)
}

fn concat_rows(first: &Tensor, second: &Tensor) -> Tensor {
    let n = first.shape()[0];
    let (a, b) = (first.shape()[1], second.shape()[1]);
    let mut data = Vec::with_capacity(n * (a + b));
    for i in 0..n {
        data.extend_from_slice(first.row(i));
        data.extend_from_slice(second.row(i));
    }
    Tensor::new(vec![n, a + b], data).expect("consistent widths")
}

fn split_rows(t: &Tensor, left: usize) -> (Tensor, Tensor) {
    let n = t.shape()[0];
    let right = t.shape()[1] - left;
    let mut l = Vec::with_capacity(n * left);
    let mut r = Vec::with_capacity(n * right);
    for i in 0..n {
        let row = t.row(i);
        l.extend_from_slice(&row[..left]);
        r.extend_from_slice(&row[left..]);
    }
    (
        Tensor::new(vec![n, left], l).expect("split"),
        Tensor::new(vec![n, right], r).expect("split"),
    )
}

impl FfnModel {
    /// Gaussian weights with the topology's `init_std`, zero biases, all
    /// drawn from the seed's init stream.
    pub fn build(topology: FfnTopology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut rng = stream(seed, Purpose::Init, 0);
        let std = topology.init_std;
        let layers = layer_shapes(&topology)?
            .into_iter()
            .map(|(w, b)| LayerState::gaussian(&w, b, std, &mut rng))
            .collect();
        Ok(FfnModel::assemble(topology, layers, seed))
    }

    fn assemble(topology: FfnTopology, layers: Vec<LayerState>, seed: u64) -> Self {
        let mut it = layers.into_iter();
        let conv = it.by_ref().take(topology.conv_stages.len()).collect();
        let mut next = || it.next().expect("one state per layer");
        FfnModel {
            conv,
            cnn_fc: next(),
            buffer_cnn: next(),
            buffer_hc: next(),
            fusion: next(),
            classifier: next(),
            topology,
            rng_seed: seed,
            iteration: 0,
        }
    }

    pub fn topology(&self) -> &FfnTopology {
        &self.topology
    }

    pub fn layer_names(&self) -> Vec<String> {
        layer_names(&self.topology)
    }

    /// Layers in canonical order, matching [`FfnModel::layer_names`].
    pub fn layers(&self) -> Vec<&LayerState> {
        let mut v: Vec<&LayerState> = self.conv.iter().collect();
        v.extend([
            &self.cnn_fc,
            &self.buffer_cnn,
            &self.buffer_hc,
            &self.fusion,
            &self.classifier,
        ]);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LayerState> {
        let mut v: Vec<&mut LayerState> = self.conv.iter_mut().collect();
        v.extend([
            &mut self.cnn_fc,
            &mut self.buffer_cnn,
            &mut self.buffer_hc,
            &mut self.fusion,
            &mut self.classifier,
        ]);
        v
    }

    pub fn layer(&self, name: &str) -> Option<&LayerState> {
        let i = self.layer_names().iter().position(|n| n == name)?;
        Some(self.layers()[i])
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    pub fn feature_dim(&self) -> usize {
        self.topology.fusion_dim
    }

    /// Swaps in a freshly initialized classifier with `num_classes` outputs.
    pub fn replace_classifier(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        if num_classes == 0 {
            return Err(Error::Construction {
                layer: CLASSIFIER.into(),
                message: "at least one class is required".into(),
            });
        }
        let mut rng = stream(seed, Purpose::Init, 1 + self.iteration);
        self.classifier = LayerState::gaussian(
            &[self.topology.fusion_dim, num_classes],
            num_classes,
            self.topology.init_std,
            &mut rng,
        );
        self.topology.num_classes = num_classes;
        Ok(())
    }

    fn check_inputs(&self, images: &Tensor, descriptors: &Tensor) -> Result<usize> {
        let t = &self.topology;
        let want = [t.input_channels, t.input_height, t.input_width];
        if images.shape().len() != 4 || images.shape()[1..] != want {
            return Err(Error::arg(format!(
                "images have shape {:?}, expected N×{}×{}×{}",
                images.shape(),
                want[0],
                want[1],
                want[2]
            )));
        }
        let n = images.shape()[0];
        if descriptors.shape() != [n, t.handcrafted_dim] {
            return Err(Error::arg(format!(
                "descriptors have shape {:?}, expected [{n}, {}]",
                descriptors.shape(),
                t.handcrafted_dim
            )));
        }
        Ok(n)
    }

    /// Full forward pass. `rng` drives the dropout masks in train mode.
    pub fn forward(
        &self,
        images: &Tensor,
        descriptors: &Tensor,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Activations> {
        let n = self.check_inputs(images, descriptors)?;
        let t = &self.topology;
        let mut ops = Vec::new();
        let mut h = images.clone();
        for (i, stage) in t.conv_stages.iter().enumerate() {
            let p = ConvParams {
                stride: stage.stride,
                pad: stage.pad,
            };
            let z = conv2d_forward(&h, &self.conv[i], p)?;
            ops.push(OpCache::Conv { stage: i, input: h });
            h = relu_forward(&z);
            ops.push(OpCache::Relu { input: z });
            let pool_first = t.norm_order == NormOrder::PoolThenLrn;
            for step in [pool_first, !pool_first] {
                if step {
                    if let Some(pp) = stage.pool {
                        let out = maxpool_forward(&h, pp)?;
                        ops.push(OpCache::Pool {
                            input_shape: h.shape().to_vec(),
                            argmax: out.argmax,
                        });
                        h = out.output;
                    }
                } else if stage.lrn {
                    let out = lrn_forward(&h, &t.lrn)?;
                    ops.push(OpCache::Lrn { input: h });
                    h = out;
                }
            }
        }
        let conv_out_shape = h.shape().to_vec();
        let flat = h.reshape(vec![n, conv_out_shape[1..].iter().product()])?;
        let z_fc = fc_forward(&flat, &self.cnn_fc)?;
        let x = relu_forward(&z_fc);

        let z8 = fc_forward(&x, &self.buffer_cnn)?;
        let (a8, mask8) = dropout_mask(&relu_forward(&z8), t.buffer_dropout, mode, rng)?;
        let z8_hc = fc_forward(descriptors, &self.buffer_hc)?;
        let (a8_hc, mask8_hc) = dropout_mask(&relu_forward(&z8_hc), t.buffer_dropout, mode, rng)?;

        let concat = match t.concat_order {
            ConcatOrder::HandcraftedFirst => concat_rows(&a8_hc, &a8),
            ConcatOrder::CnnFirst => concat_rows(&a8, &a8_hc),
        };
        let z9 = fc_forward(&concat, &self.fusion)?;
        let fused = relu_forward(&z9);
        let (fused_dropped, mask9) = dropout_mask(&fused, t.fusion_dropout, mode, rng)?;
        let logits = fc_forward(&fused_dropped, &self.classifier)?;
        Ok(Activations {
            ops,
            conv_out_shape,
            flat,
            z_fc,
            x,
            x_hc: descriptors.clone(),
            z8,
            z8_hc,
            a8,
            a8_hc,
            mask8,
            mask8_hc,
            concat,
            z9,
            fused,
            mask9,
            fused_dropped,
            logits,
        })
    }

    /// Back-propagates `grad_logits` (`δ¹⁰` per sample), accumulating
    /// parameter gradients of every layer. Returns `δ⁹`, the gradient with
    /// respect to the fusion pre-activation.
    pub fn backward(&mut self, acts: &Activations, grad_logits: &Tensor) -> Result<Tensor> {
        let t = self.topology.clone();
        let g = fc_backward(&acts.fused_dropped, grad_logits, &mut self.classifier)?;
        let g = dropout_backward(&g, acts.mask9.as_deref());
        let delta9 = relu_backward(&acts.z9, &g)?;
        let g_concat = fc_backward(&acts.concat, &delta9, &mut self.fusion)?;
        let (g_a8_hc, g_a8) = match t.concat_order {
            ConcatOrder::HandcraftedFirst => split_rows(&g_concat, t.handcrafted_buffer_dim),
            ConcatOrder::CnnFirst => {
                let (c, h) = split_rows(&g_concat, t.cnn_buffer_dim);
                (h, c)
            }
        };
        let delta8_hc = relu_backward(
            &acts.z8_hc,
            &dropout_backward(&g_a8_hc, acts.mask8_hc.as_deref()),
        )?;
        fc_backward_params(&acts.x_hc, &delta8_hc, &mut self.buffer_hc)?;
        let delta8 = relu_backward(&acts.z8, &dropout_backward(&g_a8, acts.mask8.as_deref()))?;
        let g_x = fc_backward(&acts.x, &delta8, &mut self.buffer_cnn)?;
        let g_zfc = relu_backward(&acts.z_fc, &g_x)?;
        let mut g = fc_backward(&acts.flat, &g_zfc, &mut self.cnn_fc)?
            .reshape(acts.conv_out_shape.clone())?;
        for op in acts.ops.iter().rev() {
            g = match op {
                OpCache::Relu { input } => relu_backward(input, &g)?,
                OpCache::Pool {
                    input_shape,
                    argmax,
                } => maxpool_backward(&g, argmax, input_shape)?,
                OpCache::Lrn { input } => lrn_backward(input, &g, &t.lrn)?,
                OpCache::Conv { stage, input } => {
                    let s = &t.conv_stages[*stage];
                    let p = ConvParams {
                        stride: s.stride,
                        pad: s.pad,
                    };
                    if *stage == 0 {
                        conv2d_backward_params(input, &g, &mut self.conv[0], p)?;
                        break;
                    }
                    conv2d_backward(input, &g, &mut self.conv[*stage], p)?
                }
            };
        }
        Ok(delta9)
    }

    pub fn zero_grads(&mut self) {
        for l in self.layers_mut() {
            l.zero_grads();
        }
    }

    pub fn release_grads(&mut self) {
        for l in self.layers_mut() {
            l.release_grads();
        }
    }

    /// Fused features (post-ReLU fusion output, dropout off), one row per
    /// sample.
    pub fn extract_features(&self, images: &Tensor, descriptors: &Tensor) -> Result<Tensor> {
        let mut rng = stream(self.rng_seed, Purpose::Dropout, 0);
        Ok(self
            .forward(images, descriptors, Mode::Infer, &mut rng)?
            .fused)
    }

    /// Fused feature of a single `C×H×W` image.
    pub fn extract_feature(&self, image: &[f64], descriptor: &[f64]) -> Result<Vec<f64>> {
        let t = &self.topology;
        let img = Tensor::new(
            vec![1, t.input_channels, t.input_height, t.input_width],
            image.to_vec(),
        )?;
        let desc = Tensor::new(vec![1, descriptor.len()], descriptor.to_vec())?;
        Ok(self.extract_features(&img, &desc)?.into_data())
    }

    /// CNN features `x` in infer mode (the network-only baseline).
    pub fn extract_cnn_features(&self, images: &Tensor) -> Result<Tensor> {
        let n = images.shape().first().copied().unwrap_or(0);
        let desc = Tensor::zeros(&[n, self.topology.handcrafted_dim]);
        let mut rng = stream(self.rng_seed, Purpose::Dropout, 0);
        Ok(self.forward(images, &desc, Mode::Infer, &mut rng)?.x)
    }

    /// Arg-max class per sample in infer mode.
    pub fn predict(&self, images: &Tensor, descriptors: &Tensor) -> Result<Vec<usize>> {
        let mut rng = stream(self.rng_seed, Purpose::Dropout, 0);
        let logits = self
            .forward(images, descriptors, Mode::Infer, &mut rng)?
            .logits;
        let k = logits.shape()[1];
        Ok(logits
            .data()
            .chunks_exact(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = toml::Table::new();
        let topo = toml::Table::try_from(&self.topology)
            .map_err(|e| Error::arg(format!("cannot serialize topology: {e}")))?;
        meta.insert("topology".into(), toml::Value::Table(topo));
        Ok(Checkpoint {
            rng_seed: self.rng_seed,
            iteration: self.iteration,
            meta,
            layers: self
                .layer_names()
                .into_iter()
                .zip(self.layers())
                .map(|(n, l)| (n, LayerState::new(l.weights.clone(), l.bias.clone())))
                .collect(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint, origin: &Path) -> Result<Self> {
        let bad = |m: String| Error::format(origin, m);
        let topo = ck
            .meta
            .get("topology")
            .cloned()
            .ok_or_else(|| bad("checkpoint has no topology".into()))?;
        let topology: FfnTopology = topo.try_into().map_err(|e| bad(format!("topology: {e}")))?;
        topology.validate()?;
        let shapes = layer_shapes(&topology)?;
        if ck.layers.len() != shapes.len() {
            return Err(bad(format!(
                "expected {} layers, found {}",
                shapes.len(),
                ck.layers.len()
            )));
        }
        let names = layer_names(&topology);
        let mut layers = Vec::with_capacity(shapes.len());
        for ((name, state), (want, (ws, bs))) in
            ck.layers.into_iter().zip(names.iter().zip(&shapes))
        {
            if &name != want {
                return Err(bad(format!("expected layer `{want}`, found `{name}`")));
            }
            if state.weights.shape() != ws.as_slice() || state.bias.shape() != [*bs] {
                return Err(bad(format!(
                    "layer `{name}` has shapes inconsistent with the topology"
                )));
            }
            layers.push(state);
        }
        let mut model = FfnModel::assemble(topology, layers, ck.rng_seed);
        model.rng_seed = ck.rng_seed;
        model.iteration = ck.iteration;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        FfnModel::from_checkpoint(Checkpoint::load(path)?, path)
    }
}

fn layer_names(t: &FfnTopology) -> Vec<String> {
    let mut names: Vec<String> = (0..t.conv_stages.len()).map(conv_layer_name).collect();
    names.extend([CNN_FC, BUFFER_CNN, BUFFER_HC, FUSION, CLASSIFIER].map(String::from));
    names
}

/// `(weight shape, bias length)` per layer in canonical order.
fn layer_shapes(t: &FfnTopology) -> Result<Vec<(Vec<usize>, usize)>> {
    let mut shapes = Vec::with_capacity(t.conv_stages.len() + 5);
    let mut c_in = t.input_channels;
    for s in &t.conv_stages {
        shapes.push((vec![s.filters, c_in, s.kernel, s.kernel], s.filters));
        c_in = s.filters;
    }
    shapes.push((
        vec![t.conv_output_dim()?, t.cnn_feature_dim],
        t.cnn_feature_dim,
    ));
    shapes.push((vec![t.cnn_feature_dim, t.cnn_buffer_dim], t.cnn_buffer_dim));
    shapes.push((
        vec![t.handcrafted_dim, t.handcrafted_buffer_dim],
        t.handcrafted_buffer_dim,
    ));
    shapes.push((vec![t.fusion_input_dim(), t.fusion_dim], t.fusion_dim));
    shapes.push((vec![t.fusion_dim, t.num_classes], t.num_classes));
    Ok(shapes)
}

pub fn build_ffn(topology: FfnTopology, seed: u64) -> Result<FfnModel> {
    FfnModel::build(topology, seed)
}
