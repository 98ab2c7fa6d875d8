//! CIFAR-10 binary batches: per record one label byte then 3x32x32 channel-major pixels.

use std::path::Path;

use archnet_tensor::Tensor;

use super::{dequantize, quantize, FormatError};
use crate::dataset::{Dataset, Representation};
use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 3073;
pub const CIFAR_CLASSES: usize = 10;
const PIXELS: usize = 3 * 32 * 32;

pub fn decode(name: &str, buf: &[u8]) -> Result<Dataset> {
    if buf.len() % RECORD_LEN != 0 {
        return Err(FormatError::Truncated {
            format: "cifar10",
            offset: buf.len() - buf.len() % RECORD_LEN,
            needed: RECORD_LEN - buf.len() % RECORD_LEN,
            available: buf.len() % RECORD_LEN,
        }
        .into());
    }
    let n = buf.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * PIXELS);
    for (i, rec) in buf.chunks_exact(RECORD_LEN).enumerate() {
        if rec[0] as usize >= CIFAR_CLASSES {
            return Err(FormatError::InvalidField {
                format: "cifar10",
                field: "label",
                offset: i * RECORD_LEN,
                reason: format!("{} > 9", rec[0]),
            }
            .into());
        }
        labels.push(rec[0] as usize);
        pixels.extend(rec[1..].iter().map(|&b| dequantize(b)));
    }
    let t = Tensor::new(vec![n, 3, 32, 32], pixels)?;
    Dataset::new(name, t, labels, CIFAR_CLASSES, Representation::Plain)
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cifar10".into());
    decode(&name, &std::fs::read(path)?)
}

pub fn encode(data: &Dataset) -> Result<Vec<u8>> {
    if data.sample_shape() != [3, 32, 32] {
        return Err(Error::Shape {
            expected: vec![3, 32, 32],
            actual: data.sample_shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(data.len() * RECORD_LEN);
    for (i, &label) in data.labels().iter().enumerate() {
        if label >= CIFAR_CLASSES {
            return Err(Error::LabelOutOfRange {
                index: i,
                label,
                num_classes: CIFAR_CLASSES,
            });
        }
        out.push(label as u8);
        out.extend(data.images().data()[i * PIXELS..(i + 1) * PIXELS].iter().map(|&v| quantize(v)));
    }
    Ok(out)
}

pub fn write_cifar10(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(data)?)?;
    Ok(())
}
