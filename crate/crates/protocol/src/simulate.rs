//! In-process loopback run of one publisher, one server and N workers.

use std::net::SocketAddr;
use std::thread;
use std::time::{Duration, Instant};

use archnet_core::archnet::{ArchNetConfig, TrainOptions};
use archnet_core::classifier::{evaluate_accuracy, train_classifier, ClassifierConfig, ClassifierTraining};
use archnet_core::dataset::Dataset;
use archnet_core::metrics::EcReport;

use crate::error::{ProtocolError, Result};
use crate::frame::DEFAULT_MAX_FRAME;
use crate::publisher::{run_publisher, PublisherConfig, PublisherOutcome};
use crate::record::TaskRecord;
use crate::server::{Server, ServerConfig};
use crate::tap::{scan_for_leaks, Captured, Leak, Tap};
use crate::worker::{run_worker, WorkerConfig, WorkerReport};

/// Environment variable naming the server's listen port; 0 or unset picks a free port.
pub const PORT_ENV: &str = "ARCHNET_SERVER_PORT";

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub workers: usize,
    pub archnet: ArchNetConfig,
    pub archnet_train: TrainOptions,
    pub archnet_lr: f64,
    /// Epochs for the worker's classifier and for the plain reference.
    pub epochs: u32,
    /// Template for the base classifier; shape and classes are filled in.
    pub classifier: ClassifierConfig,
    pub seed: u64,
    pub min_accuracy: f64,
    /// The worker that receives the task drops its connection.
    pub kill_worker: bool,
    /// Route every connection through a recording proxy.
    pub tap: bool,
    pub port: Option<u16>,
    pub timeout: Duration,
}

impl SimConfig {
    pub fn desk(workers: usize, epochs: u32, seed: u64) -> Self {
        let archnet = ArchNetConfig::desk();
        SimConfig {
            workers,
            archnet_lr: archnet.default_lr(),
            classifier: ClassifierConfig::desk(archnet.input_shape, 2),
            archnet,
            archnet_train: TrainOptions {
                epochs: 200,
                ..TrainOptions::default()
            },
            epochs,
            seed,
            min_accuracy: 0.0,
            kill_worker: false,
            tap: false,
            port: None,
            timeout: Duration::from_secs(600),
        }
    }

    /// Port from [`PORT_ENV`] when `port` is unset.
    pub fn resolved_port(&self) -> Result<u16> {
        if let Some(p) = self.port {
            return Ok(p);
        }
        match std::env::var(PORT_ENV) {
            Ok(v) if !v.trim().is_empty() => v.trim().parse().map_err(|_| ProtocolError::Payload {
                message: "configuration",
                reason: format!("{PORT_ENV}={v:?} is not a port number"),
            }),
            _ => Ok(0),
        }
    }
}

#[derive(Debug)]
pub struct SimReport {
    pub server_addr: SocketAddr,
    pub publisher: std::result::Result<PublisherOutcome, String>,
    pub workers: Vec<std::result::Result<WorkerReport, String>>,
    pub records: Vec<TaskRecord>,
    /// Plain-data reference accuracy against the server-validated encrypted accuracy.
    pub ec: Option<EcReport>,
    pub frames: Vec<Captured>,
    /// Empty unless a leak was found; only scanned when tapping.
    pub leaks: Vec<Leak>,
}

impl SimReport {
    pub fn completed(&self) -> bool {
        self.publisher.is_ok()
    }
}

/// `plain` must carry a train/validation split.
pub fn simulate(plain: &Dataset, config: &SimConfig) -> Result<SimReport> {
    let train_plain = plain.train()?;
    let val_plain = plain.val()?;
    let server = Server::bind(
        ("127.0.0.1", config.resolved_port()?),
        ServerConfig {
            io_timeout: config.timeout,
            ..ServerConfig::default()
        },
    )?
    .spawn()?;
    let tap = if config.tap {
        Some(Tap::start(server.addr(), DEFAULT_MAX_FRAME, None)?)
    } else {
        None
    };
    let target = tap.as_ref().map_or(server.addr(), Tap::addr);

    let encrypted_shape = config.archnet.encrypted_shape()?;
    let mut classifier = config.classifier.clone();
    classifier.input_shape = encrypted_shape;
    classifier.num_classes = plain.num_classes();

    let mut publisher_cfg = PublisherConfig::new(
        config.archnet.clone(),
        config.archnet_train,
        config.seed,
        config.epochs,
    );
    publisher_cfg.lr = config.archnet_lr;
    publisher_cfg.min_accuracy = config.min_accuracy;
    publisher_cfg.timeout = config.timeout;

    let server_addr = server.addr();
    let (publisher, records, workers) = thread::scope(|s| {
        let workers: Vec<_> = (0..config.workers)
            .map(|i| {
                let mut cfg = WorkerConfig::new(format!("worker-{}", i + 1), classifier.clone(), config.seed);
                cfg.timeout = config.timeout;
                cfg.abort_after_transfer = config.kill_worker;
                s.spawn(move || run_worker(target, &cfg))
            })
            .collect();
        let deadline = Instant::now() + config.timeout;
        while server.waiting_workers() < config.workers && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(2));
        }
        let publisher = run_publisher(target, plain, &publisher_cfg);
        let records = server.shutdown();
        let workers: Vec<_> = workers
            .into_iter()
            .map(|h| match h.join() {
                Ok(r) => r.map_err(|e| e.to_string()),
                Err(_) => Err("worker thread panicked".to_string()),
            })
            .collect();
        (publisher, records, workers)
    });
    let publisher = publisher.map_err(|e| e.to_string());

    let ec = match &publisher {
        Ok(outcome) => {
            let mut reference_cfg = config.classifier.clone();
            reference_cfg.input_shape = plain.sample_shape();
            reference_cfg.num_classes = plain.num_classes();
            let opts = ClassifierTraining::new(config.epochs as usize, config.seed);
            let reference = train_classifier(reference_cfg, &train_plain, &val_plain, &opts)?;
            let ao = evaluate_accuracy(&reference, &val_plain)?;
            let mut report = EcReport::new(
                plain.name.clone(),
                outcome.archnet.encryptor_tag(),
                config.epochs as usize,
                ao,
                outcome.validation.accuracy,
                config.classifier.digest(),
                config.seed,
            )?;
            report.ao_curve = reference.accuracy_curve;
            Some(report)
        }
        Err(_) => None,
    };

    let frames = tap.as_ref().map(Tap::frames).unwrap_or_default();
    let leaks = match &publisher {
        Ok(outcome) if config.tap => scan_for_leaks(&frames, plain, &outcome.archnet.decoder_params),
        _ => Vec::new(),
    };
    Ok(SimReport {
        server_addr,
        publisher,
        workers,
        records,
        ec,
        frames,
        leaks,
    })
}
