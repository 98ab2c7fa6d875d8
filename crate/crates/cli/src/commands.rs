//! One function per subcommand. Each returns the lines it prints.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use archnet_core::archnet::{reconstruction_error, train_new, ArchNetConfig, TrainOptions, TrainedArchNet};
use archnet_core::baselines::rc4_encrypt_dataset;
use archnet_core::classifier::ClassifierConfig;
use archnet_core::dataset::{split, split_plan, Dataset, SplitRatio};
use archnet_core::digest::sha256_hex;
use archnet_core::formats::aenc;
use archnet_core::formats::atae::Checkpoint;
use archnet_core::metrics::{ec_compare, plot_curves, visualize_channels, EcReport};
use archnet_protocol::simulate::{simulate, SimConfig, SimReport};
use archnet_protocol::worker::WorkerReport;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::{
    Command, EncryptArgs, EvaluateArgs, Rc4EncryptArgs, SimulateArgs, TrainArchnetArgs, VisualizeArgs,
};
use crate::error::{CliError, Result};
use crate::source::DatasetSource;

pub const RECORD_FILE: &str = "experiment.json";
pub const CHECKPOINT_FILE: &str = "archnet.atae";

/// Everything needed to re-run a command, plus what it produced.
#[derive(Debug, Serialize)]
pub struct ExperimentSpec<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    #[serde(flatten)]
    pub command: &'a Command,
    pub results: Value,
}

pub fn run(command: &Command) -> Result<Vec<String>> {
    match command {
        Command::TrainArchnet(a) => train_archnet(command, a),
        Command::Encrypt(a) => encrypt(command, a),
        Command::Rc4Encrypt(a) => rc4_encrypt(command, a),
        Command::Evaluate(a) => evaluate(command, a),
        Command::Visualize(a) => visualize(command, a),
        Command::Simulate(a) => run_simulation(command, a),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_record(path: &Path, command: &Command, results: Value) -> Result<()> {
    let spec = ExperimentSpec {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        results,
    };
    let text = serde_json::to_string_pretty(&spec).map_err(|source| CliError::Json {
        what: "experiment record",
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// `out.aenc` -> `out.aenc.experiment.json`
fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".");
    name.push(RECORD_FILE);
    PathBuf::from(name)
}

fn ensure_parent(out: &Path) -> Result<()> {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn parse_ratio(s: &str) -> Result<SplitRatio> {
    s.parse().map_err(|e: archnet_core::Error| CliError::Usage(e.to_string()))
}

fn load(source: &str, seed: u64) -> Result<Dataset> {
    source.parse::<DatasetSource>()?.load(seed)
}

fn write_curve_csv(path: &Path, header: &str, curves: &[&[f64]]) -> Result<()> {
    let rows = curves.iter().map(|c| c.len()).max().unwrap_or(0);
    let mut text = format!("epoch,{header}\n");
    for i in 0..rows {
        text.push_str(&(i + 1).to_string());
        for c in curves {
            text.push(',');
            if let Some(v) = c.get(i) {
                text.push_str(&v.to_string());
            }
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

fn shape_str(s: [usize; 3]) -> String {
    format!("{}x{}x{}", s[0], s[1], s[2])
}

fn check_input(data: &Dataset, cfg: &ArchNetConfig) -> Result<()> {
    if data.sample_shape() != cfg.input_shape {
        return Err(CliError::Usage(format!(
            "dataset samples are {} but config {} expects {}",
            shape_str(data.sample_shape()),
            cfg.name,
            shape_str(cfg.input_shape)
        )));
    }
    Ok(())
}

fn train_archnet(command: &Command, a: &TrainArchnetArgs) -> Result<Vec<String>> {
    let cfg = ArchNetConfig::preset(&a.config)?;
    let data = split(&load(&a.dataset, a.seed)?, parse_ratio(&a.split)?, a.seed)?;
    check_input(&data, &cfg)?;
    let (train, val) = (data.train()?, data.val()?);
    let lr = a.lr.unwrap_or_else(|| cfg.default_lr());
    let opts = TrainOptions {
        epochs: a.epochs,
        batch_size: a.batch_size,
        loss: a.loss,
    };
    let clock = Instant::now();
    let trained = train_new(cfg, &train, &opts, lr, a.seed)?;
    let seconds = clock.elapsed().as_secs_f64();
    let bytes = trained.to_checkpoint()?.encode()?;
    let net = TrainedArchNet::from_checkpoint(&Checkpoint::decode(&bytes)?)?;
    let recon = if val.is_empty() { None } else { Some(reconstruction_error(&net, &val)?) };

    create_dir(&a.out)?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    fs::write(&ckpt_path, &bytes).map_err(io_err(&ckpt_path))?;
    write_curve_csv(&a.out.join("loss_curve.csv"), "loss", &[&net.loss_curve])?;
    plot_curves(&[&net.loss_curve], a.out.join("loss_curve.png"))?;
    let results = json!({
        "param_count": net.param_count(),
        "encrypted_shape": net.config.encrypted_shape()?,
        "train_samples": train.len(),
        "val_samples": val.len(),
        "lr": lr,
        "final_loss": net.loss_curve.last(),
        "val_reconstruction_error": recon,
        "checkpoint_sha256": sha256_hex(&bytes),
        "encryptor": net.encryptor_tag(),
        "seconds": seconds,
    });
    write_record(&a.out.join(RECORD_FILE), command, results)?;
    let mut lines = vec![format!(
        "trained {} ({} parameters) for {} epochs on {} samples in {seconds:.1}s",
        net.config.name,
        net.param_count(),
        a.epochs,
        train.len()
    )];
    if let Some(loss) = net.loss_curve.last() {
        lines.push(format!("final {} loss {loss:.6}", a.loss));
    }
    if let Some(r) = recon {
        lines.push(format!("validation reconstruction error {r:.6}"));
    }
    lines.push(format!("checkpoint {}", ckpt_path.display()));
    Ok(lines)
}

fn load_archnet(path: &Path) -> Result<TrainedArchNet> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(TrainedArchNet::from_checkpoint(&Checkpoint::decode(&bytes)?)?)
}

fn write_dataset(command: &Command, data: &Dataset, out: &Path, extra: Value) -> Result<Vec<String>> {
    ensure_parent(out)?;
    aenc::write_aenc(data, out)?;
    let mut results = json!({
        "samples": data.len(),
        "sample_shape": data.sample_shape(),
        "representation": data.representation().tag(),
        "sha256": sha256_hex(&aenc::encode(data)?),
    });
    if let (Value::Object(r), Value::Object(e)) = (&mut results, extra) {
        r.extend(e);
    }
    write_record(&sidecar(out), command, results)?;
    Ok(vec![format!(
        "wrote {} samples of shape {} ({}) to {}",
        data.len(),
        shape_str(data.sample_shape()),
        data.representation(),
        out.display()
    )])
}

fn encrypt(command: &Command, a: &EncryptArgs) -> Result<Vec<String>> {
    let net = load_archnet(&a.checkpoint)?;
    let data = load(&a.dataset, a.seed)?;
    check_input(&data, &net.config)?;
    let enc = net.encrypt(&data)?;
    write_dataset(command, &enc, &a.out, json!({ "encryptor": net.encryptor_tag() }))
}

fn rc4_encrypt(command: &Command, a: &Rc4EncryptArgs) -> Result<Vec<String>> {
    let data = load(&a.dataset, a.seed)?;
    let out = rc4_encrypt_dataset(&data, a.key.as_bytes())?;
    write_dataset(command, &out, &a.out, json!({}))
}

fn evaluate(command: &Command, a: &EvaluateArgs) -> Result<Vec<String>> {
    let plain = load(&a.plain, a.seed)?;
    let encrypted = load(&a.encrypted, a.seed)?;
    if plain.labels() != encrypted.labels() {
        return Err(CliError::Usage(format!(
            "{} and {} do not hold the same samples (labels differ)",
            a.plain, a.encrypted
        )));
    }
    let plan = split_plan(plain.labels(), plain.num_classes(), parse_ratio(&a.split)?, a.seed)?;
    let plain = plain.apply_split(&plan)?;
    let encrypted = encrypted.apply_split(&plan)?;
    let template = ClassifierConfig::desk(plain.sample_shape(), plain.num_classes());
    let name = encrypted.representation().tag().to_string();
    let report = ec_compare(&plain, &encrypted, &name, &template, a.classifier_epochs, a.seed)?;
    if let Some(dir) = &a.out {
        write_report_files(dir, command, &report)?;
    }
    Ok(vec![report.to_line()])
}

fn write_report_files(dir: &Path, command: &Command, report: &EcReport) -> Result<()> {
    create_dir(dir)?;
    let value = serde_json::to_value(report).map_err(|source| CliError::Json {
        what: "EC report",
        source,
    })?;
    write_curve_csv(
        &dir.join("accuracy_curves.csv"),
        "ao,ae",
        &[&report.ao_curve, &report.ae_curve],
    )?;
    plot_curves(&[&report.ao_curve, &report.ae_curve], dir.join("accuracy_curves.png"))?;
    write_record(&dir.join(RECORD_FILE), command, json!({ "ec_report": value }))
}

fn parse_channels(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("channels {s:?} must be three comma-separated indices")))?;
    parts
        .try_into()
        .map_err(|_| CliError::Usage(format!("channels {s:?} must name exactly three indices")))
}

fn visualize(command: &Command, a: &VisualizeArgs) -> Result<Vec<String>> {
    let channels = parse_channels(&a.channels)?;
    let data = load(&a.encrypted, a.seed)?;
    if a.sample >= data.len() {
        return Err(CliError::Usage(format!(
            "sample {} out of range for {} samples",
            a.sample,
            data.len()
        )));
    }
    let sample = data.sample(a.sample)?;
    ensure_parent(&a.out)?;
    visualize_channels(&sample, channels, &a.out)?;
    let bytes = fs::read(&a.out).map_err(io_err(&a.out))?;
    let [_, h, w] = data.sample_shape();
    write_record(
        &sidecar(&a.out),
        command,
        json!({ "width": w, "height": h, "png_sha256": sha256_hex(&bytes) }),
    )?;
    Ok(vec![format!("wrote {w}x{h} RGB image of channels {channels:?} to {}", a.out.display())])
}

/// Parses `1pub,1srv,Nwork` and returns N.
pub fn parse_nodes(s: &str) -> Result<usize> {
    let usage = |why: String| CliError::Usage(format!("nodes {s:?}: {why}"));
    let (mut publishers, mut servers, mut workers) = (0usize, 0usize, 0usize);
    for part in s.split(',') {
        let part = part.trim();
        let digits = part.chars().take_while(char::is_ascii_digit).count();
        let count: usize = part[..digits]
            .parse()
            .map_err(|_| usage(format!("{part:?} lacks a count")))?;
        match &part[digits..] {
            "pub" | "publisher" => publishers += count,
            "srv" | "server" => servers += count,
            "work" | "worker" | "workers" => workers += count,
            other => return Err(usage(format!("unknown role {other:?}"))),
        }
    }
    if publishers != 1 || servers != 1 {
        return Err(usage("exactly one publisher and one server are supported".into()));
    }
    if workers == 0 {
        return Err(usage("at least one worker is needed".into()));
    }
    Ok(workers)
}

fn run_simulation(command: &Command, a: &SimulateArgs) -> Result<Vec<String>> {
    let workers = parse_nodes(&a.nodes)?;
    let archnet = ArchNetConfig::preset(&a.config)?;
    let data = split(&load(&a.dataset, a.seed)?, parse_ratio(&a.split)?, a.seed)?;
    check_input(&data, &archnet)?;
    let mut cfg = SimConfig::desk(workers, a.epochs, a.seed);
    cfg.archnet_lr = archnet.default_lr();
    cfg.classifier = ClassifierConfig::desk(archnet.input_shape, data.num_classes());
    cfg.archnet = archnet;
    cfg.archnet_train.epochs = a.archnet_epochs;
    cfg.min_accuracy = a.min_accuracy;
    cfg.kill_worker = a.kill_worker;
    cfg.tap = a.tap;
    cfg.timeout = Duration::from_secs(a.timeout_secs);
    let report = simulate(&data, &cfg)?;
    let (lines, results) = describe(&report, a.tap);
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_record(&dir.join(RECORD_FILE), command, results)?;
        if let Some(ec) = &report.ec {
            let path = dir.join("accuracy_curve.csv");
            write_curve_csv(&path, "ao", &[&ec.ao_curve])?;
        }
    }
    if let Err(why) = &report.publisher {
        let mut lines = lines;
        lines.push(format!("task failed: {why}"));
        return Err(CliError::Failed(lines.join("\n")));
    }
    if !report.leaks.is_empty() {
        return Err(CliError::Failed(format!(
            "{}\nwire tap found {} leak(s)",
            lines.join("\n"),
            report.leaks.len()
        )));
    }
    Ok(lines)
}

fn describe(report: &SimReport, tapped: bool) -> (Vec<String>, Value) {
    let mut lines = vec![format!("server listened on {}", report.server_addr)];
    let mut workers = Vec::new();
    for (i, w) in report.workers.iter().enumerate() {
        let text = match w {
            Ok(WorkerReport::Completed(c)) => format!(
                "completed task {} in {:.3}s, paid {}",
                c.task_id,
                c.t3.as_secs_f64(),
                c.payment
            ),
            Ok(WorkerReport::Idle) => "idle".to_string(),
            Ok(WorkerReport::Aborted { task_id }) => format!("dropped task {task_id}"),
            Err(e) => format!("error: {e}"),
        };
        lines.push(format!("worker {}: {text}", i + 1));
        workers.push(text);
    }
    let tasks: Vec<Value> = report
        .records
        .iter()
        .map(|r| {
            lines.push(format!(
                "task {}: {:?} (assigned to {:?}, requeues {})",
                r.task_id, r.status, r.assigned_to, r.requeues
            ));
            json!({
                "task_id": r.task_id,
                "status": format!("{:?}", r.status),
                "assigned_to": r.assigned_to,
                "requeues": r.requeues,
                "failure": r.failure,
                "history": r.history.iter().map(|(s, t)| json!([format!("{s:?}"), t])).collect::<Vec<_>>(),
            })
        })
        .collect();
    let mut results = json!({ "workers": workers, "tasks": tasks });
    if let Ok(o) = &report.publisher {
        let d = o.delay;
        lines.push(format!("delay {}", d.to_line()));
        lines.push(format!(
            "validation accuracy {:.4} ({} of {}), publisher re-check {:.4}",
            o.validation.accuracy, o.validation.correct, o.validation.total, o.local_accuracy
        ));
        results["delay"] = json!({
            "t0": d.t0, "t1": d.t1, "t2": d.t2, "t3": d.t3, "t4": d.t4, "legs": d.legs,
        });
        results["validation_accuracy"] = json!(o.validation.accuracy);
        results["local_accuracy"] = json!(o.local_accuracy);
        results["checkpoint_sha256"] = json!(o.validation.checkpoint_digest);
    }
    if let Some(ec) = &report.ec {
        lines.push(format!("ec {}", ec.to_line()));
        results["ec_report"] = serde_json::to_value(ec).unwrap_or(Value::Null);
    }
    if tapped {
        lines.push(format!(
            "wire tap: {} frames, {} leak(s)",
            report.frames.len(),
            report.leaks.len()
        ));
        results["tap"] = json!({
            "frames": report.frames.len(),
            "bytes": report.frames.iter().map(|f| f.bytes.len()).sum::<usize>(),
            "leaks": report.leaks.iter().map(|l| l.what.clone()).collect::<Vec<_>>(),
        });
    }
    (lines, results)
}
