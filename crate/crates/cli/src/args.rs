//! Command-line flags.

use std::path::PathBuf;

use archnet_core::archnet::LossKind;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "archnet", version, about = "ArchNet dataset encryption toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train an H-encoder / L-decoder pair as an identity map.
    TrainArchnet(TrainArchnetArgs),
    /// Encrypt a dataset with a trained ArchNet checkpoint.
    Encrypt(EncryptArgs),
    /// Encrypt a dataset's quantized bytes with RC4; applying it twice restores the plain data.
    Rc4Encrypt(Rc4EncryptArgs),
    /// Train one classifier on plain and one on encrypted data and report EC.
    Evaluate(EvaluateArgs),
    /// Render three ciphertext channels of one sample as an RGB PNG.
    Visualize(VisualizeArgs),
    /// Run publisher, server and workers over loopback TCP.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArchnetArgs {
    /// synth[:N[:SIZE]], idx:IMAGES,LABELS, cifar10:PATH or FILE.aenc
    #[arg(long, default_value = "synth")]
    pub dataset: String,
    #[arg(long, default_value = "desk", value_parser = ["mnist", "fmnist", "cifar10", "desk"])]
    pub config: String,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = LossKind::Mse)]
    pub loss: LossKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Adam learning rate; defaults to the config's own.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// train:val ratio; only the train part is used for fitting.
    #[arg(long, default_value = "5:1")]
    pub split: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EncryptArgs {
    /// ArchNet checkpoint written by train-archnet.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: String,
    /// Seed for generated datasets.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output AENC file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Rc4EncryptArgs {
    #[arg(long)]
    pub key: String,
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Plain dataset source.
    #[arg(long)]
    pub plain: String,
    /// Encrypted dataset source (same samples and labels, any representation).
    #[arg(long)]
    pub encrypted: String,
    #[arg(long, default_value_t = 30)]
    pub classifier_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "5:1")]
    pub split: String,
    /// Directory for the report, curves and run record.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VisualizeArgs {
    #[arg(long)]
    pub encrypted: String,
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    /// Three channel indices, e.g. 0,1,2
    #[arg(long, default_value = "0,1,2")]
    pub channels: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PNG file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Role counts, e.g. 1pub,1srv,2work
    #[arg(long, default_value = "1pub,1srv,2work")]
    pub nodes: String,
    #[arg(long, default_value = "synth")]
    pub dataset: String,
    #[arg(long, default_value = "desk", value_parser = ["mnist", "fmnist", "cifar10", "desk"])]
    pub config: String,
    /// Worker classifier epochs.
    #[arg(long, default_value_t = 30)]
    pub epochs: u32,
    #[arg(long, default_value_t = 200)]
    pub archnet_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "5:1")]
    pub split: String,
    /// Accuracy the server requires before paying.
    #[arg(long, default_value_t = 0.0)]
    pub min_accuracy: f64,
    /// The worker that receives the task disconnects before training.
    #[arg(long)]
    pub kill_worker: bool,
    /// Record all traffic through a proxy and scan it for plaintext or decoder weights.
    #[arg(long)]
    pub tap: bool,
    #[arg(long, default_value_t = 600)]
    pub timeout_secs: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
