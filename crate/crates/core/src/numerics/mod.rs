//! Tensor arithmetic, reverse-mode gradients and seedable dropout.

mod graph;
pub mod kernels;
mod rng;
mod tensor;

pub use graph::{Gradients, Graph, Var, GELU_COEFF, MASKED_SCORE};
pub use rng::{check_rate, dropout, dropout_mask, MaskRng, RngStream};
pub use tensor::Tensor;
