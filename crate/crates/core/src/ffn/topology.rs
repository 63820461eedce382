use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::conv_output_size;
use crate::nn::{LrnParams, PoolParams};

/// One convolutional stage: conv, ReLU, then optional pooling and LRN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default)]
    pub pool: Option<PoolParams>,
    #[serde(default)]
    pub lrn: bool,
}

fn one() -> usize {
    1
}

/// Order of the pooling and normalization steps inside a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    #[default]
    PoolThenLrn,
    LrnThenPool,
}

/// Block order of the fusion-layer input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatOrder {
    /// `[hand-crafted buffer, CNN buffer]`.
    #[default]
    HandcraftedFirst,
    CnnFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfnTopology {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub conv_stages: Vec<ConvStage>,
    #[serde(default)]
    pub norm_order: NormOrder,
    #[serde(default)]
    pub lrn: LrnParams,
    /// Width of the FC layer closing the conv branch (the CNN feature `x`).
    pub cnn_feature_dim: usize,
    pub handcrafted_dim: usize,
    pub cnn_buffer_dim: usize,
    pub handcrafted_buffer_dim: usize,
    pub fusion_dim: usize,
    pub num_classes: usize,
    pub buffer_dropout: f64,
    pub fusion_dropout: f64,
    pub init_std: f64,
    #[serde(default)]
    pub concat_order: ConcatOrder,
}

impl FfnTopology {
    /// Desk-scale network: 32×32 RGB input, two 3×3 conv stages of 8 and
    /// 16 filters each pooled 2/2, 64-wide heads.
    pub fn toy(handcrafted_dim: usize, num_classes: usize) -> Self {
        let stage = |filters| ConvStage {
            filters,
            kernel: 3,
            stride: 1,
            pad: 1,
            pool: Some(PoolParams {
                window: 2,
                stride: 2,
            }),
            lrn: true,
        };
        FfnTopology {
            input_height: 32,
            input_width: 32,
            input_channels: 3,
            conv_stages: vec![stage(8), stage(16)],
            norm_order: NormOrder::PoolThenLrn,
            lrn: LrnParams::default(),
            cnn_feature_dim: 64,
            handcrafted_dim,
            cnn_buffer_dim: 64,
            handcrafted_buffer_dim: 64,
            fusion_dim: 64,
            num_classes,
            buffer_dropout: 0.5,
            fusion_dropout: 0.5,
            init_std: 0.01,
            concat_order: ConcatOrder::HandcraftedFirst,
        }
    }

    /// Five-stage 224×224 network with 4096-wide heads. Every stage but
    /// the third is followed by pooling and LRN; the last pool has stride 1
    /// so the conv output is 256×4×4 = 4096 values.
    pub fn paper(handcrafted_dim: usize, num_classes: usize) -> Self {
        let pool = |stride| Some(PoolParams { window: 3, stride });
        let stages = vec![
            ConvStage {
                filters: 96,
                kernel: 11,
                stride: 4,
                pad: 2,
                pool: pool(2),
                lrn: true,
            },
            ConvStage {
                filters: 256,
                kernel: 5,
                stride: 1,
                pad: 2,
                pool: pool(2),
                lrn: true,
            },
            ConvStage {
                filters: 384,
                kernel: 3,
                stride: 1,
                pad: 1,
                pool: None,
                lrn: false,
            },
            ConvStage {
                filters: 384,
                kernel: 3,
                stride: 1,
                pad: 1,
                pool: pool(2),
                lrn: true,
            },
            ConvStage {
                filters: 256,
                kernel: 3,
                stride: 1,
                pad: 1,
                pool: pool(1),
                lrn: true,
            },
        ];
        FfnTopology {
            input_height: 224,
            input_width: 224,
            input_channels: 3,
            conv_stages: stages,
            norm_order: NormOrder::PoolThenLrn,
            lrn: LrnParams::default(),
            cnn_feature_dim: 4096,
            handcrafted_dim,
            cnn_buffer_dim: 4096,
            handcrafted_buffer_dim: 4096,
            fusion_dim: 4096,
            num_classes,
            buffer_dropout: 0.5,
            fusion_dropout: 0.5,
            init_std: 0.01,
            concat_order: ConcatOrder::HandcraftedFirst,
        }
    }

    /// `[channels, height, width]` after each conv stage.
    pub fn stage_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = [self.input_channels, self.input_height, self.input_width];
        let mut shapes = Vec::with_capacity(self.conv_stages.len());
        for (i, s) in self.conv_stages.iter().enumerate() {
            let name = conv_layer_name(i);
            let fail = |m: String| Error::Construction {
                layer: name.clone(),
                message: m,
            };
            if s.filters == 0 || s.kernel == 0 || s.stride == 0 {
                return Err(fail("filters, kernel and stride must be positive".into()));
            }
            let h = conv_output_size(shape[1], s.kernel, s.stride, s.pad);
            let w = conv_output_size(shape[2], s.kernel, s.stride, s.pad);
            let (Some(mut h), Some(mut w)) = (h, w) else {
                return Err(fail(format!(
                    "kernel {} does not fit input {}x{} with pad {}",
                    s.kernel, shape[1], shape[2], s.pad
                )));
            };
            if let Some(p) = s.pool {
                if p.window == 0 || p.stride == 0 || p.window > h || p.window > w {
                    return Err(fail(format!(
                        "pool window {} does not fit {h}x{w}",
                        p.window
                    )));
                }
                h = (h - p.window) / p.stride + 1;
                w = (w - p.window) / p.stride + 1;
            }
            shape = [s.filters, h, w];
            shapes.push(shape);
        }
        Ok(shapes)
    }

    /// Flattened width of the conv branch output.
    pub fn conv_output_dim(&self) -> Result<usize> {
        let last = self.stage_shapes()?.last().copied().unwrap_or([
            self.input_channels,
            self.input_height,
            self.input_width,
        ]);
        Ok(last.iter().product())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |layer: &str, m: &str| {
            Err(Error::Construction {
                layer: layer.into(),
                message: m.into(),
            })
        };
        if self.input_height == 0 || self.input_width == 0 || self.input_channels == 0 {
            return fail("input", "input dimensions must be positive");
        }
        self.conv_output_dim()?;
        if self.conv_stages.iter().any(|s| s.lrn) {
            self.lrn.validate().map_err(|e| Error::Construction {
                layer: "lrn".into(),
                message: e.to_string(),
            })?;
        }
        if self.cnn_feature_dim == 0 {
            return fail(CNN_FC, "CNN feature width must be positive");
        }
        if self.handcrafted_dim == 0 {
            return fail(BUFFER_HC, "hand-crafted input width must be positive");
        }
        if self.cnn_buffer_dim == 0 {
            return fail(BUFFER_CNN, "buffer width must be positive");
        }
        if self.handcrafted_buffer_dim != self.cnn_buffer_dim {
            return fail(
                BUFFER_HC,
                &format!(
                    "buffer width {} differs from the CNN-side buffer width {}",
                    self.handcrafted_buffer_dim, self.cnn_buffer_dim
                ),
            );
        }
        if self.fusion_dim == 0 {
            return fail(FUSION, "fusion width must be positive");
        }
        if self.num_classes < 1 {
            return fail(CLASSIFIER, "at least one class is required");
        }
        for (layer, r) in [
            (BUFFER_CNN, self.buffer_dropout),
            (FUSION, self.fusion_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return fail(layer, "dropout ratio must lie in [0, 1)");
            }
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return fail("init", "init_std must be finite and non-negative");
        }
        Ok(())
    }

    /// Input width of the fusion layer.
    pub fn fusion_input_dim(&self) -> usize {
        self.cnn_buffer_dim + self.handcrafted_buffer_dim
    }

    pub fn image_len(&self) -> usize {
        self.input_channels * self.input_height * self.input_width
    }
}

pub const CNN_FC: &str = "cnn_fc";
/// Layer 7, CNN side (`W⁷`).
pub const BUFFER_CNN: &str = "buffer_cnn";
/// Layer 7, hand-crafted side (`W̃⁷`).
pub const BUFFER_HC: &str = "buffer_hc";
/// Layer 8 (`[W̃⁸, W⁸]`).
pub const FUSION: &str = "fusion";
/// Layer 9; its logits feed the softmax loss (layer 10).
pub const CLASSIFIER: &str = "classifier";

pub fn conv_layer_name(stage: usize) -> String {
    format!("conv{}", stage + 1)
}
