//! Stateless forward/backward kernels used by the autodiff graph.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod pool;

pub use activation::{relu, sigmoid, softmax_rows};
pub use conv::{conv2d, conv2d_backward, conv_output_len, conv_transpose2d, conv_transpose2d_backward, conv_transpose_output_len};
pub use linear::{linear, linear_backward};
pub use loss::{bce, mse, softmax_cross_entropy, BCE_EPS};
pub use pool::{maxpool2d, maxpool2d_backward};
