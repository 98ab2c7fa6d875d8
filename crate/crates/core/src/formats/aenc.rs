//! AENC: a dataset (usually ciphertext) as f32 tensors plus labels.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "AENC" | version u16 | tag_len u16 | tag (utf-8) | num_classes u16
//!        | rank u32 | dims u32 * rank | data f32 * prod(dims)
//!        | label_count u32 | labels u8 * label_count | crc32 u32
//! ```
//!
//! The tag records the representation ("plain" or the encryptor id).

use std::path::Path;

use archnet_tensor::Tensor;

use super::{append_crc, dim_u32, strip_crc, FormatError, Reader};
use crate::dataset::{Dataset, Representation};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AENC";
pub const VERSION: u16 = 1;
const FORMAT: &str = "aenc";

pub fn encode(data: &Dataset) -> Result<Vec<u8>> {
    let tag = data.representation().tag().as_bytes();
    let tag_len = u16::try_from(tag.len()).map_err(|_| Error::InvalidArgument("representation tag too long".into()))?;
    let classes = u16::try_from(data.num_classes()).map_err(|_| Error::InvalidArgument("too many classes".into()))?;
    let images = data.images();
    let mut out = Vec::with_capacity(32 + tag.len() + images.len() * 4 + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&tag_len.to_le_bytes());
    out.extend_from_slice(tag);
    out.extend_from_slice(&classes.to_le_bytes());
    out.extend_from_slice(&dim_u32(FORMAT, "rank", images.rank())?.to_le_bytes());
    for &d in images.shape() {
        out.extend_from_slice(&dim_u32(FORMAT, "dimension", d)?.to_le_bytes());
    }
    for &v in images.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.extend_from_slice(&dim_u32(FORMAT, "label count", data.len())?.to_le_bytes());
    for &l in data.labels() {
        out.push(u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit a byte")))?);
    }
    append_crc(&mut out);
    Ok(out)
}

pub fn decode(name: &str, buf: &[u8]) -> Result<Dataset> {
    let body = strip_crc(FORMAT, buf)?;
    let mut r = Reader::new(FORMAT, body);
    r.magic(MAGIC)?;
    let version = r.u16_le()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion {
            format: FORMAT,
            found: version,
        }
        .into());
    }
    let tag_len = r.u16_le()? as usize;
    let tag = std::str::from_utf8(r.take(tag_len)?).map_err(|e| r.invalid("tag", e.to_string()))?;
    let representation = Representation::from_tag(tag);
    let num_classes = r.u16_le()? as usize;
    let rank = r.u32_le()? as usize;
    if rank != 4 {
        return Err(r.invalid("rank", format!("expected 4, got {rank}")).into());
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32_le()? as usize);
    }
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| r.invalid("dimensions", "element count overflows"))?;
    let data = r.f32_le_vec(count)?;
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(r.invalid("data", format!("non-finite value at element {i}")).into());
    }
    let label_count = r.u32_le()? as usize;
    if label_count != dims[0] {
        return Err(FormatError::CountMismatch {
            images: dims[0],
            labels: label_count,
        }
        .into());
    }
    let label_offset = r.offset();
    let labels = r.take(label_count)?;
    r.finish()?;
    if let Some(i) = labels.iter().position(|&l| l as usize >= num_classes) {
        return Err(FormatError::InvalidField {
            format: FORMAT,
            field: "label",
            offset: label_offset + i,
            reason: format!("{} >= {num_classes} classes", labels[i]),
        }
        .into());
    }
    let images = Tensor::new(dims, data.into_iter().map(f64::from).collect())?;
    Dataset::new(
        name,
        images,
        labels.iter().map(|&l| l as usize).collect(),
        num_classes,
        representation,
    )
}

pub fn write_aenc(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(data)?)?;
    Ok(())
}

pub fn read_aenc(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "aenc".into());
    decode(&name, &std::fs::read(path)?)
}
