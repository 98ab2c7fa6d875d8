//! Compute node: trains the base classifier on the encrypted training split.

use std::net::ToSocketAddrs;
use std::time::{Duration, Instant};

use archnet_core::classifier::{train_classifier, ClassifierConfig, ClassifierTraining};
use archnet_core::dataset::Dataset;
use archnet_core::digest::sha256_hex;
use archnet_core::formats::aenc;

use crate::error::{ErrorCode, ProtocolError, Result};
use crate::frame::{FrameError, DEFAULT_MAX_FRAME};
use crate::messages::{DatasetTransfer, ErrorMsg, ModelReturn, PaymentAck, RequestTask};
use crate::net::{connect, recv_as, send};
use crate::record::now_nanos;

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfig {
    pub name: String,
    pub classifier: ClassifierConfig,
    /// Overrides the epoch count requested by the task.
    pub epochs: Option<usize>,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub timeout: Duration,
    pub max_frame: usize,
    /// Drop the connection right after receiving the dataset.
    pub abort_after_transfer: bool,
}

impl WorkerConfig {
    pub fn new(name: impl Into<String>, classifier: ClassifierConfig, seed: u64) -> Self {
        WorkerConfig {
            name: name.into(),
            classifier,
            epochs: None,
            seed,
            batch_size: 32,
            lr: 1e-3,
            timeout: Duration::from_secs(600),
            max_frame: DEFAULT_MAX_FRAME,
            abort_after_transfer: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletedTask {
    pub task_id: u64,
    /// Training wall time.
    pub t3: Duration,
    /// Wall-clock bounds of training in nanoseconds since the epoch.
    pub train_started_at: u64,
    pub train_finished_at: u64,
    pub checkpoint_digest: String,
    pub payment: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkerReport {
    Completed(CompletedTask),
    /// The server had no task before shutting down.
    Idle,
    /// The worker dropped the task on purpose after receiving it.
    Aborted { task_id: u64 },
}

/// Requests one task, trains on it and returns the checkpoint.
pub fn run_worker(addr: impl ToSocketAddrs + ToString, config: &WorkerConfig) -> Result<WorkerReport> {
    let max = config.max_frame;
    let mut stream = connect(addr, config.timeout)?;
    send(
        &mut stream,
        &RequestTask {
            worker: config.name.clone(),
            sent_at: now_nanos(),
        },
        max,
    )?;
    let transfer = match recv_as::<DatasetTransfer>(&mut stream, max) {
        Ok(t) => t,
        Err(ProtocolError::Remote {
            code: ErrorCode::NoTask | ErrorCode::Shutdown,
            ..
        })
        | Err(ProtocolError::Frame(FrameError::Closed)) => return Ok(WorkerReport::Idle),
        Err(e) => return Err(e),
    };
    let leg2 = now_nanos().saturating_sub(transfer.sent_at);
    let id = transfer.task_id;
    if config.abort_after_transfer {
        drop(stream);
        return Ok(WorkerReport::Aborted { task_id: id });
    }

    let actual = sha256_hex(&transfer.train);
    if actual != transfer.digest {
        let msg = ErrorMsg::new(Some(id), ErrorCode::DigestMismatch, "dataset digest mismatch");
        let _ = send(&mut stream, &msg, max);
        return Err(ProtocolError::DigestMismatch {
            what: "dataset",
            expected: transfer.digest,
            actual,
        });
    }
    let train = match decode_and_check(&transfer, &config.classifier) {
        Ok(d) => d,
        Err((code, e)) => {
            let _ = send(&mut stream, &ErrorMsg::new(Some(id), code, e.to_string()), max);
            return Err(e);
        }
    };

    let opts = ClassifierTraining {
        epochs: config.epochs.unwrap_or(transfer.epochs as usize),
        batch_size: config.batch_size,
        lr: config.lr,
        seed: config.seed,
    };
    let no_val = train.subset(&[])?;
    let train_started_at = now_nanos();
    let clock = Instant::now();
    let trained = train_classifier(config.classifier.clone(), &train, &no_val, &opts);
    let t3 = clock.elapsed();
    let train_finished_at = now_nanos();
    let model = match trained {
        Ok(m) => m,
        Err(e) => {
            let msg = ErrorMsg::new(Some(id), ErrorCode::TrainingFailed, e.to_string());
            let _ = send(&mut stream, &msg, max);
            return Err(e.into());
        }
    };
    let checkpoint = model.to_checkpoint()?.encode()?;
    let checkpoint_digest = sha256_hex(&checkpoint);
    send(
        &mut stream,
        &ModelReturn {
            task_id: id,
            checkpoint,
            compute_nanos: t3.as_nanos() as u64,
            legs: vec![leg2],
            queue_nanos: 0,
            sent_at: now_nanos(),
        },
        max,
    )?;
    let paid = recv_as::<PaymentAck>(&mut stream, max)?;
    Ok(WorkerReport::Completed(CompletedTask {
        task_id: id,
        t3,
        train_started_at,
        train_finished_at,
        checkpoint_digest,
        payment: paid.amount,
    }))
}

fn decode_and_check(
    transfer: &DatasetTransfer,
    cfg: &ClassifierConfig,
) -> std::result::Result<Dataset, (ErrorCode, ProtocolError)> {
    let train = aenc::decode("train", &transfer.train).map_err(|e| (ErrorCode::BadRequest, e.into()))?;
    if train.sample_shape() != cfg.input_shape || train.num_classes() != cfg.num_classes {
        let mut expected = cfg.input_shape.to_vec();
        expected.push(cfg.num_classes);
        let mut actual = train.sample_shape().to_vec();
        actual.push(train.num_classes());
        return Err((
            ErrorCode::ShapeMismatch,
            archnet_core::Error::Shape { expected, actual }.into(),
        ));
    }
    Ok(train)
}
