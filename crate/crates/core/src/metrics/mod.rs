//! EC metric, EC experiments and ciphertext visualization.

pub mod correlation;
pub mod ec;
pub mod experiment;
pub mod visualize;

pub use correlation::{bilinear_resize, pixel_correlation};
pub use ec::{ec_value, EcReport};
pub use experiment::{ec_compare, ec_experiment, Encryptor};
pub use visualize::{plot_curves, render_channels, visualize_channels, write_png_rgb};
