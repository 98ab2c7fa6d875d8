use std::thread;

use crate::archnet::TrainedArchNet;
use crate::baselines::{noise_baseline, rc4_encrypt_dataset};
use crate::classifier::{evaluate_accuracy, train_classifier, ClassifierConfig, ClassifierTraining, TrainedClassifier};
use crate::dataset::Dataset;
use crate::error::{Error, Result, ResultExt};
use crate::metrics::ec::EcReport;

/// How the encrypted arm of an EC experiment is produced.
#[derive(Debug, Clone)]
pub enum Encryptor<'a> {
    None,
    ArchNet(&'a TrainedArchNet),
    Rc4 { key: Vec<u8> },
    Noise { sigma: f64, seed: u64 },
}

impl Encryptor<'_> {
    pub fn name(&self) -> String {
        match self {
            Encryptor::None => "none".into(),
            Encryptor::ArchNet(net) => net.encryptor_tag(),
            Encryptor::Rc4 { .. } => "rc4".into(),
            Encryptor::Noise { sigma, .. } => format!("noise:{sigma}"),
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        match self {
            Encryptor::None => Ok(data.clone()),
            Encryptor::ArchNet(net) => net.encrypt(data),
            Encryptor::Rc4 { key } => rc4_encrypt_dataset(data, key),
            Encryptor::Noise { sigma, seed } => noise_baseline(data, *sigma, *seed),
        }
    }
}

fn arm(template: &ClassifierConfig, data: &Dataset, opts: &ClassifierTraining) -> Result<(TrainedClassifier, f64)> {
    let mut cfg = template.clone();
    cfg.input_shape = data.sample_shape();
    cfg.num_classes = data.num_classes();
    let val = data.val()?;
    let model = train_classifier(cfg, &data.train()?, &val, opts)?;
    let acc = evaluate_accuracy(&model, &val)?;
    Ok((model, acc))
}

/// Encrypts `plain` with `encryptor`, then runs [`ec_compare`].
pub fn ec_experiment(
    plain: &Dataset,
    encryptor: &Encryptor<'_>,
    template: &ClassifierConfig,
    epochs: usize,
    seed: u64,
) -> Result<EcReport> {
    let name = encryptor.name();
    let encrypted = encryptor.apply(plain).context(|| format!("encrypting {} with {name}", plain.name))?;
    ec_compare(plain, &encrypted, &name, template, epochs, seed)
}

/// Trains one classifier on the plain split and one on the encrypted split
/// with identical seed and epochs, then compares final validation accuracy.
///
/// Both datasets must hold the same labels and split. `template` supplies the
/// block structure; input shape and class count are taken from each arm's data.
pub fn ec_compare(
    plain: &Dataset,
    encrypted: &Dataset,
    encryptor: &str,
    template: &ClassifierConfig,
    epochs: usize,
    seed: u64,
) -> Result<EcReport> {
    if plain.labels() != encrypted.labels() || plain.split_point() != encrypted.split_point() {
        return Err(Error::InvalidArgument(format!(
            "{} and {} differ in labels or split; the arms are not comparable",
            plain.name, encrypted.name
        )));
    }
    let opts = ClassifierTraining::new(epochs, seed);
    let (plain_model, enc_model) = thread::scope(|s| {
        let a = s.spawn(|| arm(template, plain, &opts));
        let b = s.spawn(|| arm(template, encrypted, &opts));
        (
            a.join().expect("plain arm panicked"),
            b.join().expect("encrypted arm panicked"),
        )
    });
    let (plain_model, ao) = plain_model.context(|| format!("plain arm on {}", plain.name))?;
    let (enc_model, ae) = enc_model.context(|| format!("{encryptor} arm on {}", plain.name))?;
    let mut report = EcReport::new(
        plain.name.clone(),
        encryptor.to_string(),
        epochs,
        ao,
        ae,
        template.digest(),
        seed,
    )
    .context(|| "assembling EC report".to_string())?;
    report.ao_curve = plain_model.accuracy_curve;
    report.ae_curve = enc_model.accuracy_curve;
    Ok(report)
}
