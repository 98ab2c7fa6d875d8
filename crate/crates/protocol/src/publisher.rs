//! Dataset owner: trains ArchNet, posts only ciphertext, and checks the
//! returned model on its own encrypted validation split.

use std::net::ToSocketAddrs;
use std::time::{Duration, Instant};

use archnet_core::archnet::{train_new, ArchNetConfig, TrainOptions, TrainedArchNet};
use archnet_core::classifier::{evaluate_accuracy, TrainedClassifier};
use archnet_core::dataset::Dataset;
use archnet_core::digest::sha256_hex;
use archnet_core::formats::aenc;
use archnet_core::formats::atae::Checkpoint;

use crate::error::{ErrorCode, ProtocolError, Result};
use crate::frame::DEFAULT_MAX_FRAME;
use crate::messages::{ModelReturn, PostDataset, TaskAnnounce, ValidationResult};
use crate::net::{connect, recv_as, send};
use crate::record::{now_nanos, DelayBreakdown};

#[derive(Debug, Clone, PartialEq)]
pub struct PublisherConfig {
    pub archnet: ArchNetConfig,
    pub train: TrainOptions,
    pub lr: f64,
    pub seed: u64,
    /// Epochs the worker is asked to train for.
    pub epochs: u32,
    /// Minimum validation accuracy the server must see before paying.
    pub min_accuracy: f64,
    pub timeout: Duration,
    pub max_frame: usize,
}

impl PublisherConfig {
    pub fn new(archnet: ArchNetConfig, train: TrainOptions, seed: u64, epochs: u32) -> Self {
        let lr = archnet.default_lr();
        PublisherConfig {
            archnet,
            train,
            lr,
            seed,
            epochs,
            min_accuracy: 0.0,
            timeout: Duration::from_secs(600),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PublisherOutcome {
    pub task_id: u64,
    pub classifier: TrainedClassifier,
    pub delay: DelayBreakdown,
    pub validation: ValidationResult,
    /// Accuracy recomputed locally on the encrypted validation split.
    pub local_accuracy: f64,
    /// Kept by the publisher; never sent.
    pub archnet: TrainedArchNet,
}

/// `plain` must carry a train/validation split.
pub fn run_publisher(
    addr: impl ToSocketAddrs + ToString,
    plain: &Dataset,
    config: &PublisherConfig,
) -> Result<PublisherOutcome> {
    let train_plain = plain.train()?;
    let val_plain = plain.val()?;
    let clock = Instant::now();
    let archnet = train_new(config.archnet.clone(), &train_plain, &config.train, config.lr, config.seed)?;
    let t1 = clock.elapsed();
    publish(addr, &archnet, &train_plain, &val_plain, t1, config)
}

/// Posts data encrypted with an already trained `archnet`; `t1` is its training time.
pub fn publish(
    addr: impl ToSocketAddrs + ToString,
    archnet: &TrainedArchNet,
    train_plain: &Dataset,
    val_plain: &Dataset,
    t1: Duration,
    config: &PublisherConfig,
) -> Result<PublisherOutcome> {
    let max = config.max_frame;
    let train = aenc::encode(&archnet.encrypt(train_plain)?)?;
    let val_bytes = aenc::encode(&archnet.encrypt(val_plain)?)?;
    let val = aenc::decode("val", &val_bytes)?;
    let train_digest = sha256_hex(&train);
    let post = PostDataset {
        epochs: config.epochs,
        min_accuracy: config.min_accuracy,
        train_digest: train_digest.clone(),
        val_digest: sha256_hex(&val_bytes),
        train,
        val: val_bytes,
        sent_at: 0,
    };

    let mut stream = connect(addr, config.timeout)?;
    send(
        &mut stream,
        &PostDataset {
            sent_at: now_nanos(),
            ..post
        },
        max,
    )?;
    let announce: TaskAnnounce = recv_as(&mut stream, max)?;
    if announce.dataset_digest != train_digest {
        return Err(ProtocolError::DigestMismatch {
            what: "announced dataset",
            expected: train_digest,
            actual: announce.dataset_digest,
        });
    }
    let validation: ValidationResult = recv_as(&mut stream, max)?;
    if !validation.passed {
        return Err(ProtocolError::Remote {
            code: ErrorCode::ValidationFailed,
            message: format!("server validation accuracy {:.4} below threshold", validation.accuracy),
        });
    }
    let model: ModelReturn = recv_as(&mut stream, max)?;
    let leg4 = now_nanos().saturating_sub(model.sent_at);
    if model.task_id != announce.task_id || validation.task_id != announce.task_id {
        return Err(ProtocolError::Payload {
            message: "ModelReturn",
            reason: format!("task {} returned for announced task {}", model.task_id, announce.task_id),
        });
    }
    let digest = sha256_hex(&model.checkpoint);
    if digest != validation.checkpoint_digest {
        return Err(ProtocolError::DigestMismatch {
            what: "checkpoint",
            expected: validation.checkpoint_digest,
            actual: digest,
        });
    }
    let classifier = TrainedClassifier::from_checkpoint(&Checkpoint::decode(&model.checkpoint)?)?;
    let local_accuracy = evaluate_accuracy(&classifier, &val)?;

    if model.legs.len() != 3 {
        return Err(ProtocolError::Payload {
            message: "ModelReturn",
            reason: format!("expected 3 measured legs from the server, got {}", model.legs.len()),
        });
    }
    let secs = |n: u64| Duration::from_nanos(n).as_secs_f64();
    let legs = [secs(model.legs[0]), secs(model.legs[1]), secs(model.legs[2]), secs(leg4)];
    let delay = DelayBreakdown::new(
        t1.as_secs_f64(),
        legs,
        secs(model.compute_nanos),
        secs(model.queue_nanos),
    )?;
    Ok(PublisherOutcome {
        task_id: announce.task_id,
        classifier,
        delay,
        validation,
        local_accuracy,
        archnet: archnet.clone(),
    })
}
