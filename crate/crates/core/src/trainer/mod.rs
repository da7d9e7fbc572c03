//! Float training stack and the memory-constrained training loop.

mod network;
mod ops;
mod optim;
mod train;

pub use network::{ActShape, Grads, LayerParams, LayerSpec, Network, Normalization, Trace};
pub use ops::argmax;
pub use optim::{cosine_lr, Sgd};
pub use train::{
    evaluate_float, train, train_dense, train_east, train_wp, write_epoch_csv, Augment, EpochLog, Mode, TrainConfig,
    TrainOutcome,
};

/// Softmax cross-entropy loss of `logits` against `label` and its gradient.
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> (f32, Vec<f32>) {
    ops::softmax_xent(logits, label)
}
