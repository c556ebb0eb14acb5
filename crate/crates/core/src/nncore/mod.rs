//! Minimal tensors, layers, reverse-mode gradients and SGD: enough to train
//! the small networks every search pipeline evaluates.

mod data;
mod layer;
mod net;
mod ops;
mod optim;
mod params;
mod tensor;
mod train;

pub use data::{Dataset, LabeledSet};
pub use layer::{count_macs, validate_chain, LayerKind, LayerSpec, NetSpec};
pub use net::{
    argmax_rows, backward, backward_layers, forward, forward_layers, forward_with,
    softmax_cross_entropy, Gradients, NoHook, Trace, TrainHook,
};
pub use optim::Adam;
pub use params::{LayerParams, Params};
pub use tensor::Tensor;
pub use train::{evaluate, fit, mean_loss, train_sgd, SgdConfig, TrainOutcome};
