//! Additive Gaussian noise baseline.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, Representation};
use crate::error::{Error, Result};

/// Adds seeded N(0, sigma^2) noise to every pixel and clamps to [0, 1].
pub fn noise_baseline(data: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    let mut images = data.images().clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in images.data_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    data.with_images(images, Representation::Encrypted(format!("noise:{sigma}")))
}
