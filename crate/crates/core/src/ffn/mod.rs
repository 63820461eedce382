//! The feature fusion network: a convolutional branch and a hand-crafted
//! descriptor branch, each closed by a buffer layer, concatenated into a
//! fusion layer whose ReLU output is the exported feature, and a softmax
//! classifier used only for training.

mod model;
mod probe;
mod topology;
mod train;

pub use model::{build_ffn, Activations, FfnModel};
pub use probe::{branch_influence_probe, FfnFragment, InfluenceReport};
pub use topology::{
    conv_layer_name, ConcatOrder, ConvStage, FfnTopology, NormOrder, BUFFER_CNN, BUFFER_HC,
    CLASSIFIER, CNN_FC, FUSION,
};
pub use train::{
    evaluate_loss, hard_example_finetune, misclassified_ids, train, write_loss_trace,
    FinetuneReport, HardExamplePhase, LossRecord, StopReason, TrainReport, TrainSchedule,
    TrainingSet,
};
