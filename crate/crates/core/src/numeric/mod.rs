//! Dense double-precision tensors with reverse-mode differentiation.

pub mod gradcheck;
mod graph;
mod tensor;

pub use graph::{
    log_sum_exp, resample_taps, sigmoid, softmax_in_place, Gradients, Graph, Var, DEFAULT_EPS,
};
pub use tensor::Tensor;
