//! IDX files as used by MNIST and Fashion-MNIST.

use std::path::Path;

use archnet_tensor::Tensor;

use super::{dequantize, dim_u32, quantize, FormatError, Reader};
use crate::dataset::{Dataset, Representation};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
/// MNIST and Fashion-MNIST both have ten classes.
pub const IDX_CLASSES: usize = 10;

const FORMAT: &str = "idx";

/// Parses an images file into `(N, H, W, pixel bytes)`.
pub fn parse_images(buf: &[u8]) -> std::result::Result<(usize, usize, usize, &[u8]), FormatError> {
    let mut r = Reader::new(FORMAT, buf);
    r.magic(&IMAGES_MAGIC.to_be_bytes())?;
    let n = r.u32_be()? as usize;
    let h = r.u32_be()? as usize;
    let w = r.u32_be()? as usize;
    let count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| r.invalid("dimensions", "N*H*W overflows"))?;
    let pixels = r.take(count)?;
    r.finish()?;
    Ok((n, h, w, pixels))
}

pub fn parse_labels(buf: &[u8]) -> std::result::Result<&[u8], FormatError> {
    let mut r = Reader::new(FORMAT, buf);
    r.magic(&LABELS_MAGIC.to_be_bytes())?;
    let n = r.u32_be()? as usize;
    let labels = r.take(n)?;
    r.finish()?;
    Ok(labels)
}

pub fn decode(name: &str, images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (n, h, w, pixels) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != n {
        return Err(FormatError::CountMismatch {
            images: n,
            labels: labels.len(),
        }
        .into());
    }
    if let Some(i) = labels.iter().position(|&l| l as usize >= IDX_CLASSES) {
        return Err(FormatError::InvalidField {
            format: FORMAT,
            field: "label",
            offset: 8 + i,
            reason: format!("{} >= {IDX_CLASSES}", labels[i]),
        }
        .into());
    }
    let t = Tensor::new(vec![n, 1, h, w], pixels.iter().map(|&b| dequantize(b)).collect())?;
    Dataset::new(
        name,
        t,
        labels.iter().map(|&l| l as usize).collect(),
        IDX_CLASSES,
        Representation::Plain,
    )
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let name = images_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    decode(&name, &std::fs::read(images_path)?, &std::fs::read(labels_path)?)
}

/// Encodes a single-channel plain dataset as (images file, labels file).
pub fn encode(data: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let [c, h, w] = data.sample_shape();
    if c != 1 {
        return Err(Error::Shape {
            expected: vec![1, h, w],
            actual: vec![c, h, w],
        });
    }
    if data.representation() != &Representation::Plain {
        return Err(Error::InvalidArgument("IDX stores plain pixels only".into()));
    }
    let n = data.len();
    let mut images = Vec::with_capacity(16 + data.images().len());
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [n, h, w] {
        images.extend_from_slice(&dim_u32(FORMAT, "dimension", d)?.to_be_bytes());
    }
    images.extend(data.images().data().iter().map(|&v| quantize(v)));

    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&dim_u32(FORMAT, "count", n)?.to_be_bytes());
    for &l in data.labels() {
        labels.push(u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit a byte")))?);
    }
    Ok((images, labels))
}

pub fn write_idx(data: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (images, labels) = encode(data)?;
    std::fs::write(images_path, images)?;
    std::fs::write(labels_path, labels)?;
    Ok(())
}
