//! Traditional-cipher and noise comparison arms.

pub mod noise;
pub mod rc4;

pub use noise::noise_baseline;
pub use rc4::{rc4_encrypt_dataset, Rc4, Rc4Error};
