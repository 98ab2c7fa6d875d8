//! `--dataset` / `--plain` / `--encrypted` source strings.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use archnet_core::dataset::{synth_shapes, Dataset};
use archnet_core::formats::{aenc, cifar, idx};

use crate::error::{CliError, Result};

/// Defaults for `synth`: sample count and image side.
pub const SYNTH_DEFAULT_N: usize = 480;
pub const SYNTH_DEFAULT_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// `synth[:N[:SIZE]]`, generated from the command's seed.
    Synth { n: usize, size: usize },
    /// `idx:IMAGES,LABELS`
    Idx { images: PathBuf, labels: PathBuf },
    /// `cifar10:PATH`
    Cifar10(PathBuf),
    /// A path ending in `.aenc`.
    Aenc(PathBuf),
}

impl DatasetSource {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        Ok(match self {
            DatasetSource::Synth { n, size } => synth_shapes(*n, *size, seed)?,
            DatasetSource::Idx { images, labels } => idx::load_idx(images, labels)?,
            DatasetSource::Cifar10(p) => cifar::load_cifar10(p)?,
            DatasetSource::Aenc(p) => aenc::read_aenc(p)?,
        })
    }
}

impl FromStr for DatasetSource {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let usage = |why: &str| CliError::Usage(format!("dataset {s:?}: {why}"));
        if let Some(rest) = s.strip_prefix("synth") {
            let mut parts = rest.split(':').skip(1);
            let mut num = |default: usize, what: &str| -> Result<usize> {
                match parts.next() {
                    None => Ok(default),
                    Some(p) => p.parse().map_err(|_| usage(&format!("{what} {p:?} is not a number"))),
                }
            };
            if !rest.is_empty() && !rest.starts_with(':') {
                return Err(usage("expected synth[:N[:SIZE]]"));
            }
            let n = num(SYNTH_DEFAULT_N, "sample count")?;
            let size = num(SYNTH_DEFAULT_SIZE, "image size")?;
            if parts.next().is_some() {
                return Err(usage("expected synth[:N[:SIZE]]"));
            }
            return Ok(DatasetSource::Synth { n, size });
        }
        if let Some(rest) = s.strip_prefix("idx:") {
            let (images, labels) = rest.split_once(',').ok_or_else(|| usage("expected idx:IMAGES,LABELS"))?;
            return Ok(DatasetSource::Idx {
                images: images.into(),
                labels: labels.into(),
            });
        }
        if let Some(rest) = s.strip_prefix("cifar10:") {
            return Ok(DatasetSource::Cifar10(rest.into()));
        }
        if s.ends_with(".aenc") {
            return Ok(DatasetSource::Aenc(s.into()));
        }
        Err(usage("expected synth[:N[:SIZE]], idx:IMAGES,LABELS, cifar10:PATH or a .aenc file"))
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Synth { n, size } => write!(f, "synth:{n}:{size}"),
            DatasetSource::Idx { images, labels } => write!(f, "idx:{},{}", images.display(), labels.display()),
            DatasetSource::Cifar10(p) => write!(f, "cifar10:{}", p.display()),
            DatasetSource::Aenc(p) => write!(f, "{}", p.display()),
        }
    }
}
