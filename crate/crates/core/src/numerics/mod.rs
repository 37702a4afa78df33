//! Tensors, reverse-mode differentiation and the optimizer.

mod ctx;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use ctx::{ForwardCtx, Trainable};
pub use graph::{gelu_scalar, Grads, Graph, Var};
pub use optim::{adam_step, lr_at, AdamHyper, Moments, OptimizerState, ScheduledLr};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}
