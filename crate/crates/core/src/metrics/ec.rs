use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// (AO - AE) / AO.
pub fn ec_value(ao: f64, ae: f64) -> Result<f64> {
    if !(ao > 0.0 && ao <= 1.0) {
        return Err(Error::UndefinedMetric(format!("EC needs 0 < AO <= 1, got AO = {ao}")));
    }
    if !(0.0..=1.0).contains(&ae) {
        return Err(Error::InvalidArgument(format!("AE must lie in [0, 1], got {ae}")));
    }
    Ok((ao - ae) / ao)
}

/// Signed fraction as a percentage with two decimals, e.g. `-2.23%`.
pub fn format_percent(fraction: f64) -> String {
    let p = fraction * 100.0;
    // Avoid printing "-0.00%".
    let p = if p.abs() < 0.005 { 0.0 } else { p };
    format!("{p:.2}%")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcReport {
    pub dataset: String,
    pub encryptor: String,
    pub epochs: usize,
    pub ao: f64,
    pub ae: f64,
    pub ec: f64,
    pub classifier_digest: String,
    pub seed: u64,
    pub ao_curve: Vec<f64>,
    pub ae_curve: Vec<f64>,
}

impl EcReport {
    pub fn new(
        dataset: impl Into<String>,
        encryptor: impl Into<String>,
        epochs: usize,
        ao: f64,
        ae: f64,
        classifier_digest: impl Into<String>,
        seed: u64,
    ) -> Result<Self> {
        Ok(EcReport {
            dataset: dataset.into(),
            encryptor: encryptor.into(),
            epochs,
            ao,
            ae,
            ec: ec_value(ao, ae)?,
            classifier_digest: classifier_digest.into(),
            seed,
            ao_curve: Vec::new(),
            ae_curve: Vec::new(),
        })
    }

    pub fn ec_percent(&self) -> String {
        format_percent(self.ec)
    }

    /// One-line text record.
    pub fn to_line(&self) -> String {
        format!(
            "dataset={} encryptor={} epochs={} seed={} ao={:.4} ae={:.4} ec={:.4} ec_pct={} classifier={}",
            self.dataset,
            self.encryptor,
            self.epochs,
            self.seed,
            self.ao,
            self.ae,
            self.ec,
            self.ec_percent(),
            self.classifier_digest
        )
    }
}
