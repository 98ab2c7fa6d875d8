//! Bit-exact readers and writers for the on-disk formats.
//!
//! * IDX (MNIST / Fashion-MNIST), big-endian headers.
//! * CIFAR-10 binary batches, 3073-byte records.
//! * AENC encrypted datasets, little-endian with trailing CRC32.
//! * ATAE model checkpoints, little-endian with trailing CRC32.

pub mod aenc;
pub mod atae;
pub mod cifar;
pub mod idx;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("{format}: bad magic at offset {offset}: expected {expected:02x?}, found {found:02x?}")]
    BadMagic {
        format: &'static str,
        offset: usize,
        expected: Vec<u8>,
        found: Vec<u8>,
    },
    #[error("{format}: truncated at offset {offset}: needed {needed} more bytes, {available} available")]
    Truncated {
        format: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{format}: {extra} unexpected trailing bytes at offset {offset}")]
    TrailingBytes {
        format: &'static str,
        offset: usize,
        extra: usize,
    },
    #[error("{format}: invalid {field} at offset {offset}: {reason}")]
    InvalidField {
        format: &'static str,
        field: &'static str,
        offset: usize,
        reason: String,
    },
    #[error("{format}: unsupported version {found}")]
    UnsupportedVersion { format: &'static str, found: u16 },
    #[error("{format}: CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch {
        format: &'static str,
        stored: u32,
        computed: u32,
    },
    #[error("sample count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },
}

/// Bounds-checked cursor over a byte slice.
pub(crate) struct Reader<'a> {
    format: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(format: &'static str, buf: &'a [u8]) -> Self {
        Reader { format, buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated {
                format: self.format,
                offset: self.pos,
                needed: n,
                available: self.remaining(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn magic(&mut self, expected: &[u8]) -> Result<(), FormatError> {
        let offset = self.pos;
        let found = self.take(expected.len())?;
        if found != expected {
            return Err(FormatError::BadMagic {
                format: self.format,
                offset,
                expected: expected.to_vec(),
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn u16_le(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32_le(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub(crate) fn u32_be(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub(crate) fn f32_le_vec(&mut self, count: usize) -> Result<Vec<f32>, FormatError> {
        let bytes = count.checked_mul(4).ok_or_else(|| self.invalid("element count", "overflows"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }

    pub(crate) fn invalid(&self, field: &'static str, reason: impl Into<String>) -> FormatError {
        FormatError::InvalidField {
            format: self.format,
            field,
            offset: self.pos,
            reason: reason.into(),
        }
    }

    pub(crate) fn finish(&self) -> Result<(), FormatError> {
        if self.remaining() != 0 {
            return Err(FormatError::TrailingBytes {
                format: self.format,
                offset: self.pos,
                extra: self.remaining(),
            });
        }
        Ok(())
    }
}

/// Splits off and verifies a trailing little-endian CRC32 over everything before it.
pub(crate) fn strip_crc<'a>(format: &'static str, buf: &'a [u8]) -> Result<&'a [u8], FormatError> {
    if buf.len() < 4 {
        return Err(FormatError::Truncated {
            format,
            offset: 0,
            needed: 4,
            available: buf.len(),
        });
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::CrcMismatch {
            format,
            stored,
            computed,
        });
    }
    Ok(body)
}

pub(crate) fn append_crc(buf: &mut Vec<u8>) {
    let crc = crc32fast::hash(buf);
    buf.extend_from_slice(&crc.to_le_bytes());
}

pub(crate) fn dim_u32(format: &'static str, field: &'static str, v: usize) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::InvalidField {
        format,
        field,
        offset: 0,
        reason: format!("{v} does not fit in u32"),
    })
}

/// Pixel in [0, 1] to the nearest byte.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize(b: u8) -> f64 {
    b as f64 / 255.0
}
