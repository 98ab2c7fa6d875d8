//! SHA-256 fingerprints of datasets and parameter sets.

use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::params::ParamSet;

pub fn sha256_hex(bytes: &[u8]) -> String {
    to_hex(&Sha256::digest(bytes))
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest over names, shapes and f64 bit patterns.
pub fn params_digest(params: &ParamSet) -> String {
    let mut h = Sha256::new();
    for (name, t) in params.iter() {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((t.rank() as u64).to_le_bytes());
        for &d in t.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    to_hex(&h.finalize())
}

/// Digest over shape, pixels, labels, class count, split and representation.
pub fn dataset_digest(data: &Dataset) -> String {
    let mut h = Sha256::new();
    for &d in data.images().shape() {
        h.update((d as u64).to_le_bytes());
    }
    for &v in data.images().data() {
        h.update(v.to_bits().to_le_bytes());
    }
    for &l in data.labels() {
        h.update((l as u64).to_le_bytes());
    }
    h.update((data.num_classes() as u64).to_le_bytes());
    h.update((data.split_point().map_or(u64::MAX, |s| s as u64)).to_le_bytes());
    h.update(data.representation().tag().as_bytes());
    to_hex(&h.finalize())
}
