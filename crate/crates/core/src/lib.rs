//! ArchNet dataset encryption toolkit: datasets and file formats, H-encoder /
//! L-decoder training, base classifiers, cipher baselines and EC metrics.

pub mod adam;
pub mod archnet;
pub mod baselines;
pub mod classifier;
pub mod dataset;
pub mod digest;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod nn;
pub mod params;

pub use error::{Error, Result, ResultExt};
