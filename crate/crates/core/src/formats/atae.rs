//! ATAE model checkpoints: an architecture descriptor plus named f32 tensors.
//!
//! ```text
//! "ATAE" | version u16 | descriptor_len u32 | descriptor (utf-8 JSON)
//!        | tensor_count u32
//!        | per tensor: name_len u32 | name | rank u32 | dims u32 * rank | f32 * prod(dims)
//!        | crc32 u32
//! ```
//!
//! Only architecture and weights are stored; optimizer state never is.

use std::path::Path;

use archnet_tensor::Tensor;

use super::{append_crc, dim_u32, strip_crc, FormatError, Reader};
use crate::error::Result;
use crate::params::ParamSet;

pub const MAGIC: &[u8; 4] = b"ATAE";
pub const VERSION: u16 = 1;
const FORMAT: &str = "atae";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// JSON architecture descriptor.
    pub descriptor: String,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&dim_u32(FORMAT, "descriptor length", self.descriptor.len())?.to_le_bytes());
        out.extend_from_slice(self.descriptor.as_bytes());
        out.extend_from_slice(&dim_u32(FORMAT, "tensor count", self.params.len())?.to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&dim_u32(FORMAT, "name length", name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&dim_u32(FORMAT, "rank", t.rank())?.to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&dim_u32(FORMAT, "dimension", d)?.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        append_crc(&mut out);
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
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
        let dlen = r.u32_le()? as usize;
        let descriptor = std::str::from_utf8(r.take(dlen)?)
            .map_err(|e| r.invalid("descriptor", e.to_string()))?
            .to_string();
        let count = r.u32_le()? as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let nlen = r.u32_le()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|e| r.invalid("tensor name", e.to_string()))?
                .to_string();
            let rank = r.u32_le()? as usize;
            if rank > 8 {
                return Err(r.invalid("rank", format!("{rank} exceeds 8")).into());
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32_le()? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.invalid("dimensions", "element count overflows"))?;
            let data = r.f32_le_vec(n)?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(r.invalid("tensor data", format!("non-finite value in {name}")).into());
            }
            if params.get(&name).is_some() {
                return Err(r.invalid("tensor name", format!("duplicate {name}")).into());
            }
            params.insert(name, Tensor::new(dims, data.into_iter().map(f64::from).collect())?);
        }
        r.finish()?;
        Ok(Checkpoint { descriptor, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
