//! RC4 stream cipher (KSA + PRGA) and its application to image datasets.

use thiserror::Error;

use crate::dataset::{Dataset, Representation};
use crate::error::Result;
use crate::formats::{dequantize, quantize};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rc4Error {
    #[error("rc4 key must not be empty")]
    EmptyKey,
    #[error("rc4 key is {0} bytes, the maximum is 256")]
    KeyTooLong(usize),
}

#[derive(Clone, PartialEq, Eq)]
pub struct Rc4 {
    s: [u8; 256],
    i: u8,
    j: u8,
}

impl std::fmt::Debug for Rc4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Rc4").field("i", &self.i).field("j", &self.j).finish_non_exhaustive()
    }
}

impl Rc4 {
    pub fn new(key: &[u8]) -> std::result::Result<Self, Rc4Error> {
        if key.is_empty() {
            return Err(Rc4Error::EmptyKey);
        }
        if key.len() > 256 {
            return Err(Rc4Error::KeyTooLong(key.len()));
        }
        let mut s = [0u8; 256];
        for (i, v) in s.iter_mut().enumerate() {
            *v = i as u8;
        }
        let mut j = 0u8;
        for i in 0..256 {
            j = j.wrapping_add(s[i]).wrapping_add(key[i % key.len()]);
            s.swap(i, j as usize);
        }
        Ok(Rc4 { s, i: 0, j: 0 })
    }

    pub fn permutation(&self) -> &[u8; 256] {
        &self.s
    }

    pub fn next_byte(&mut self) -> u8 {
        self.i = self.i.wrapping_add(1);
        self.j = self.j.wrapping_add(self.s[self.i as usize]);
        self.s.swap(self.i as usize, self.j as usize);
        self.s[self.s[self.i as usize].wrapping_add(self.s[self.j as usize]) as usize]
    }

    pub fn keystream(&mut self, n: usize) -> Vec<u8> {
        (0..n).map(|_| self.next_byte()).collect()
    }

    /// XORs `bytes` with the keystream in place.
    pub fn apply_in_place(&mut self, bytes: &mut [u8]) {
        for b in bytes {
            *b ^= self.next_byte();
        }
    }

    pub fn apply(&mut self, bytes: &[u8]) -> Vec<u8> {
        let mut out = bytes.to_vec();
        self.apply_in_place(&mut out);
        out
    }
}

/// Quantizes every pixel to a byte, XORs one continuous keystream over all
/// samples in index order and maps the bytes back to [0, 1].
///
/// Applying it twice with the same key restores the quantized input.
pub fn rc4_encrypt_dataset(data: &Dataset, key: &[u8]) -> Result<Dataset> {
    let mut rc4 = Rc4::new(key)?;
    let mut out = data.images().clone();
    for v in out.data_mut() {
        let c = quantize(*v) ^ rc4.next_byte();
        *v = dequantize(c);
    }
    let repr = match data.representation() {
        Representation::Plain => Representation::Encrypted("rc4".into()),
        Representation::Encrypted(t) if t == "rc4" => Representation::Plain,
        Representation::Encrypted(t) => Representation::Encrypted(format!("rc4({t})")),
    };
    data.with_images(out, repr)
}
