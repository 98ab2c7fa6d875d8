//! Dense f64 tensors and a tape-based reverse-mode autodiff engine covering
//! convolution, transposed convolution, fully-connected layers, pooling,
//! ReLU/sigmoid activations and BCE/MSE/softmax-cross-entropy losses.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_sampled};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
