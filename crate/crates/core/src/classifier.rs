//! Small CNN base model trained on plain or encrypted images.

use archnet_tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::dataset::{Dataset, Representation};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::formats::atae::Checkpoint;
use crate::nn::{batched, ActShape, Bound, LayerSpec, Stack};
use crate::params::ParamSet;

pub const CLASSIFIER: &str = "classifier";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub pool: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub hidden: usize,
}

impl ClassifierConfig {
    /// conv3x3-relu-maxpool2 twice, then hidden linear + relu and the output layer.
    pub fn desk(input_shape: [usize; 3], num_classes: usize) -> Self {
        ClassifierConfig {
            input_shape,
            num_classes,
            conv_blocks: vec![
                ConvBlock {
                    out_channels: 8,
                    pool: true,
                },
                ConvBlock {
                    out_channels: 16,
                    pool: true,
                },
            ],
            hidden: 32,
        }
    }

    pub fn stack(&self) -> Result<Stack> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        let mut layers = Vec::new();
        let mut c = self.input_shape[0];
        for b in &self.conv_blocks {
            layers.push(LayerSpec::conv(c, b.out_channels));
            layers.push(LayerSpec::Relu);
            if b.pool {
                layers.push(LayerSpec::MaxPool { kernel: 2, stride: 2 });
            }
            c = b.out_channels;
        }
        layers.push(LayerSpec::Flatten);
        let probe = Stack {
            name: CLASSIFIER.into(),
            input: ActShape::from_chw(self.input_shape),
            layers: layers.clone(),
        };
        let flat = probe.output()?.numel();
        layers.push(LayerSpec::linear(flat, self.hidden));
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::linear(self.hidden, self.num_classes));
        let stack = Stack {
            name: CLASSIFIER.into(),
            input: ActShape::from_chw(self.input_shape),
            layers,
        };
        stack.plan()?;
        Ok(stack)
    }

    /// Short fingerprint of the serialized config.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        sha256_hex(json.as_bytes())[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub config: ClassifierConfig,
    pub params: ParamSet,
    /// Validation accuracy after each epoch.
    pub accuracy_curve: Vec<f64>,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
    /// Representation of the data the model was trained on.
    pub representation: Representation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ClassifierDescriptor {
    kind: String,
    config: ClassifierConfig,
    representation: String,
}

const DESCRIPTOR_KIND: &str = "classifier";

impl TrainedClassifier {
    pub fn init(config: ClassifierConfig, seed: u64) -> Result<Self> {
        let stack = config.stack()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = stack.init(&mut rng);
        Ok(TrainedClassifier {
            config,
            params,
            accuracy_curve: Vec::new(),
            loss_curve: Vec::new(),
            representation: Representation::Plain,
        })
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if data.sample_shape() != self.config.input_shape {
            return Err(Error::Shape {
                expected: self.config.input_shape.to_vec(),
                actual: data.sample_shape().to_vec(),
            });
        }
        if let Some((index, &label)) = data
            .labels()
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.config.num_classes)
        {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                num_classes: self.config.num_classes,
            });
        }
        Ok(())
    }

    /// Logits `[N, num_classes]`.
    pub fn logits(&self, data: &Dataset) -> Result<Tensor> {
        if data.sample_shape() != self.config.input_shape {
            return Err(Error::Shape {
                expected: self.config.input_shape.to_vec(),
                actual: data.sample_shape().to_vec(),
            });
        }
        let stack = self.config.stack()?;
        batched(data.images(), 128, &[self.config.num_classes], |x| stack.forward(&self.params, x))
    }

    /// Argmax class per sample; ties resolve to the lowest index.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<usize>> {
        let logits = self.logits(data)?;
        let k = self.config.num_classes;
        Ok(logits.data().chunks(k).map(argmax).collect())
    }

    /// Checkpoint with the architecture and weights only.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let d = ClassifierDescriptor {
            kind: DESCRIPTOR_KIND.into(),
            config: self.config.clone(),
            representation: self.representation.tag().to_string(),
        };
        Ok(Checkpoint {
            descriptor: serde_json::to_string(&d).map_err(|e| Error::Config(e.to_string()))?,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let d: ClassifierDescriptor = serde_json::from_str(&ckpt.descriptor)
            .map_err(|e| Error::Config(format!("classifier descriptor: {e}")))?;
        if d.kind != DESCRIPTOR_KIND {
            return Err(Error::Config(format!("checkpoint holds a {:?}, not a classifier", d.kind)));
        }
        let stack = d.config.stack()?;
        stack.check_params(&ckpt.params)?;
        if ckpt.params.len() != stack.layers.iter().filter(|l| l.param_shapes().is_some()).count() * 2 {
            return Err(Error::Config("checkpoint holds unexpected tensors".into()));
        }
        Ok(TrainedClassifier {
            config: d.config,
            params: ckpt.params.clone(),
            accuracy_curve: Vec::new(),
            loss_curve: Vec::new(),
            representation: Representation::from_tag(&d.representation),
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Options for [`train_classifier`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl ClassifierTraining {
    pub fn new(epochs: usize, seed: u64) -> Self {
        ClassifierTraining {
            epochs,
            batch_size: 32,
            lr: 1e-3,
            seed,
        }
    }
}

/// Softmax cross-entropy training with Adam. Records validation accuracy per epoch.
pub fn train_classifier(
    config: ClassifierConfig,
    train: &Dataset,
    val: &Dataset,
    opts: &ClassifierTraining,
) -> Result<TrainedClassifier> {
    if train.representation() != val.representation() {
        return Err(Error::RepresentationMismatch {
            train: train.representation().to_string(),
            val: val.representation().to_string(),
        });
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let mut model = TrainedClassifier::init(config, opts.seed)?;
    model.representation = train.representation().clone();
    model.check(train)?;
    model.check(val)?;
    if opts.epochs > 0 && train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let stack = model.config.stack()?;
    let mut state = AdamState::new(AdamConfig::with_lr(opts.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xc1a5_5e5d);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(opts.batch_size).enumerate() {
            let x = train.images().select_outer(chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
            let mut g = Graph::new();
            let bound = Bound::parameters(&mut g, &model.params);
            let xv = g.constant(x);
            let logits = stack.forward_graph(&mut g, xv, &bound)?;
            let loss = g.softmax_cross_entropy(logits, &labels)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b });
            }
            total += value * chunk.len() as f64;
            g.backward(loss)?;
            let grads = bound.grads(&g);
            let refs: Vec<&Tensor> = grads.iter().collect();
            adam_step(model.params.tensors_mut(), &refs, &mut state)?;
        }
        model.loss_curve.push(total / train.len() as f64);
        let acc = if val.is_empty() { 0.0 } else { evaluate_accuracy(&model, val)? };
        model.accuracy_curve.push(acc);
    }
    Ok(model)
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn evaluate_accuracy(model: &TrainedClassifier, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if *data.representation() != model.representation {
        return Err(Error::RepresentationMismatch {
            train: model.representation.to_string(),
            val: data.representation().to_string(),
        });
    }
    let pred = model.predict(data)?;
    let correct = pred.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}
