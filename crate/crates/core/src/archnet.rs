//! H-encoder / L-decoder pairs trained as an identity map.

use std::fmt;
use std::str::FromStr;

use archnet_tensor::{ops, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::dataset::{Dataset, Representation};
use crate::digest::params_digest;
use crate::error::{Error, Result};
use crate::formats::atae::Checkpoint;
use crate::nn::{batched, ActShape, Bound, LayerSpec, Stack};
use crate::params::ParamSet;

pub const ENCODER: &str = "encoder";
pub const DECODER: &str = "decoder";

/// Names accepted by [`ArchNetConfig::preset`].
pub const PRESETS: [&str; 4] = ["mnist", "fmnist", "cifar10", "desk"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchNetConfig {
    pub name: String,
    pub input_shape: [usize; 3],
    pub encoder_layers: Vec<LayerSpec>,
    pub decoder_layers: Vec<LayerSpec>,
}

fn gray_28(name: &str) -> ArchNetConfig {
    use LayerSpec as L;
    ArchNetConfig {
        name: name.into(),
        input_shape: [1, 28, 28],
        encoder_layers: vec![
            L::conv(1, 3),
            L::conv(3, 10),
            L::conv(10, 10),
            L::linear(10 * 28 * 28, 20 * 28 * 28),
            L::Relu,
            L::conv(20, 20),
            L::conv_transpose(20, 10),
        ],
        decoder_layers: vec![
            L::conv_down(10, 10),
            L::conv(10, 30),
            L::conv(30, 10),
            L::conv(10, 10),
            L::conv(10, 10),
            L::Relu,
            L::conv(10, 5),
            L::conv(5, 3),
            L::Relu,
            L::conv(3, 1),
        ],
    }
}

impl ArchNetConfig {
    pub fn mnist() -> Self {
        gray_28("mnist")
    }

    pub fn fmnist() -> Self {
        gray_28("fmnist")
    }

    pub fn cifar10() -> Self {
        use LayerSpec as L;
        ArchNetConfig {
            name: "cifar10".into(),
            input_shape: [3, 32, 32],
            encoder_layers: vec![
                L::conv(3, 3),
                L::conv(3, 10),
                L::conv(10, 20),
                L::conv(20, 20),
                L::conv_transpose(20, 10),
            ],
            decoder_layers: vec![
                L::conv_down(10, 10),
                L::conv(10, 30),
                L::conv(30, 10),
                L::conv(10, 10),
                L::conv(10, 10),
                L::Relu,
                L::conv(10, 5),
                L::conv(5, 3),
                L::Relu,
                L::conv(3, 3),
            ],
        }
    }

    /// The MNIST layout on 8x8 single-channel inputs with fewer channels.
    pub fn desk() -> Self {
        use LayerSpec as L;
        ArchNetConfig {
            name: "desk".into(),
            input_shape: [1, 8, 8],
            encoder_layers: vec![
                L::conv(1, 2),
                L::conv(2, 4),
                L::conv(4, 4),
                L::linear(4 * 8 * 8, 8 * 8 * 8),
                L::Relu,
                L::conv(8, 8),
                L::conv_transpose(8, 4),
            ],
            decoder_layers: vec![
                L::conv_down(4, 4),
                L::conv(4, 8),
                L::conv(8, 4),
                L::conv(4, 4),
                L::conv(4, 4),
                L::Relu,
                L::conv(4, 2),
                L::conv(2, 2),
                L::Relu,
                L::conv(2, 1),
            ],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "mnist" => Ok(Self::mnist()),
            "fmnist" => Ok(Self::fmnist()),
            "cifar10" => Ok(Self::cifar10()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!(
                "unknown archnet config {other:?}, expected one of {}",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Adam learning rate used when none is given.
    pub fn default_lr(&self) -> f64 {
        if self.name == "desk" {
            1e-3
        } else {
            1e-5
        }
    }

    pub fn encoder_stack(&self) -> Stack {
        Stack {
            name: ENCODER.into(),
            input: ActShape::from_chw(self.input_shape),
            layers: self.encoder_layers.clone(),
        }
    }

    /// Errors when the encoder output is not a `C x H x W` activation.
    pub fn decoder_stack(&self) -> Result<Stack> {
        Ok(Stack {
            name: DECODER.into(),
            input: self.encoder_stack().output()?,
            layers: self.decoder_layers.clone(),
        })
    }

    /// Checks layer compatibility, the encoder/decoder structure rules and the round trip.
    pub fn validate(&self) -> Result<()> {
        if self.input_shape.contains(&0) {
            return Err(Error::Config(format!("input shape {:?} has a zero dimension", self.input_shape)));
        }
        match self.encoder_layers.last() {
            Some(l) if l.is_conv_transpose() => {}
            Some(l) => {
                return Err(Error::Config(format!(
                    "encoder must end with a transposed convolution, ends with {l}"
                )))
            }
            None => return Err(Error::Config("encoder has no layers".into())),
        }
        if let Some((i, l)) = self.decoder_layers.iter().enumerate().find(|(_, l)| l.is_conv_transpose()) {
            return Err(Error::Config(format!(
                "decoder[{i}] {l}: the decoder must not contain transposed convolutions"
            )));
        }
        let enc_out = self.encoder_stack().output()?;
        if !matches!(enc_out, ActShape::Spatial(..)) {
            return Err(Error::Config(format!("encoder output {:?} is not C x H x W", enc_out.dims())));
        }
        let dec_out = self.decoder_stack()?.output()?;
        if dec_out != ActShape::from_chw(self.input_shape) {
            return Err(Error::Config(format!(
                "decoder output {:?} does not match input shape {:?}",
                dec_out.dims(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Per-sample ciphertext shape `[C, H, W]`.
    pub fn encrypted_shape(&self) -> Result<[usize; 3]> {
        match self.encoder_stack().output()? {
            ActShape::Spatial(c, h, w) => Ok([c, h, w]),
            ActShape::Flat(d) => Err(Error::Config(format!("encoder output is a flat vector of {d}"))),
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder_stack().param_count() + self.decoder_layers.iter().map(LayerSpec::param_count).sum::<usize>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
    /// Forces a sigmoid on the decoder output.
    Bce,
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "bce" => Ok(LossKind::Bce),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}, expected mse or bce"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Bce => "bce",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossKind,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 50,
            batch_size: 32,
            loss: LossKind::Mse,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedArchNet {
    pub config: ArchNetConfig,
    pub encoder_params: ParamSet,
    pub decoder_params: ParamSet,
    pub loss_curve: Vec<f64>,
    pub rng_seed: u64,
    /// Set once the net has been trained with BCE.
    pub output_sigmoid: bool,
}

/// Checkpoint descriptor for a full encoder/decoder pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArchNetDescriptor {
    kind: String,
    config: ArchNetConfig,
    rng_seed: u64,
    output_sigmoid: bool,
    loss_curve: Vec<f64>,
}

const DESCRIPTOR_KIND: &str = "archnet";

/// Samples inspected by [`TrainedArchNet::dead_relu`].
pub const DEAD_PROBE: usize = 256;

/// Validates `config` and draws fresh parameters.
pub fn build_archnet(config: ArchNetConfig, seed: u64) -> Result<TrainedArchNet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder_params = config.encoder_stack().init(&mut rng);
    let decoder_params = config.decoder_stack()?.init(&mut rng);
    Ok(TrainedArchNet {
        config,
        encoder_params,
        decoder_params,
        loss_curve: Vec::new(),
        rng_seed: seed,
        output_sigmoid: false,
    })
}

impl TrainedArchNet {
    pub fn param_count(&self) -> usize {
        self.encoder_params.numel() + self.decoder_params.numel()
    }

    /// Identifies the encoder weights; used as the ciphertext representation tag.
    pub fn encryptor_tag(&self) -> String {
        format!("archnet:{}", &params_digest(&self.encoder_params)[..16])
    }

    /// First ReLU layer (as `stack[index]`) with no positive input on up to
    /// [`DEAD_PROBE`] samples of `data`.
    pub fn dead_relu(&self, data: &Dataset) -> Result<Option<String>> {
        self.check_input(data, self.config.input_shape)?;
        let n = data.len().min(DEAD_PROBE);
        if n == 0 {
            return Ok(None);
        }
        let x = data.images().slice_outer(0..n)?;
        let mut dead = None;
        let mut watch = |stack: &str, i: usize, layer: &LayerSpec, input: &Tensor| {
            if dead.is_none() && matches!(layer, LayerSpec::Relu) && !input.data().iter().any(|&v| v > 0.0) {
                dead = Some(format!("{stack}[{i}]"));
            }
        };
        let h = self
            .config
            .encoder_stack()
            .forward_inspect(&self.encoder_params, &x, |i, l, t| watch(ENCODER, i, l, t))?;
        self.config
            .decoder_stack()?
            .forward_inspect(&self.decoder_params, &h, |i, l, t| watch(DECODER, i, l, t))?;
        Ok(dead)
    }

    fn check_input(&self, data: &Dataset, expected: [usize; 3]) -> Result<()> {
        if data.sample_shape() != expected {
            return Err(Error::Shape {
                expected: expected.to_vec(),
                actual: data.sample_shape().to_vec(),
            });
        }
        Ok(())
    }

    /// H-encoder applied to every sample. Labels and split are carried over.
    pub fn encrypt(&self, data: &Dataset) -> Result<Dataset> {
        self.check_input(data, self.config.input_shape)?;
        let stack = self.config.encoder_stack();
        let out_shape = self.config.encrypted_shape()?;
        let images = batched(data.images(), 64, &out_shape, |x| stack.forward(&self.encoder_params, x))?;
        data.with_images(images, Representation::Encrypted(self.encryptor_tag()))
    }

    /// L-decoder applied to every sample, clamped to [0, 1].
    pub fn decrypt(&self, enc: &Dataset) -> Result<Dataset> {
        self.check_input(enc, self.config.encrypted_shape()?)?;
        let stack = self.config.decoder_stack()?;
        let sigmoid = self.output_sigmoid;
        let images = batched(enc.images(), 64, &self.config.input_shape, |x| {
            let y = stack.forward(&self.decoder_params, x)?;
            Ok(if sigmoid { ops::sigmoid(&y) } else { y })
        })?;
        enc.with_images(images.map(|v| v.clamp(0.0, 1.0)), Representation::Plain)
    }

    /// Full checkpoint: encoder and decoder weights plus the architecture.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let descriptor = ArchNetDescriptor {
            kind: DESCRIPTOR_KIND.into(),
            config: self.config.clone(),
            rng_seed: self.rng_seed,
            output_sigmoid: self.output_sigmoid,
            loss_curve: self.loss_curve.clone(),
        };
        let mut params = self.encoder_params.clone();
        params.extend(self.decoder_params.clone());
        Ok(Checkpoint {
            descriptor: serde_json::to_string(&descriptor).map_err(|e| Error::Config(e.to_string()))?,
            params,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let d: ArchNetDescriptor = serde_json::from_str(&ckpt.descriptor)
            .map_err(|e| Error::Config(format!("archnet descriptor: {e}")))?;
        if d.kind != DESCRIPTOR_KIND {
            return Err(Error::Config(format!("checkpoint holds a {:?}, not an archnet", d.kind)));
        }
        d.config.validate()?;
        let encoder_params = ckpt.params.with_prefix(&format!("{ENCODER}."));
        let decoder_params = ckpt.params.with_prefix(&format!("{DECODER}."));
        if encoder_params.len() + decoder_params.len() != ckpt.params.len() {
            return Err(Error::Config("checkpoint holds tensors outside encoder/decoder".into()));
        }
        d.config.encoder_stack().check_params(&encoder_params)?;
        d.config.decoder_stack()?.check_params(&decoder_params)?;
        Ok(TrainedArchNet {
            config: d.config,
            encoder_params,
            decoder_params,
            loss_curve: d.loss_curve,
            rng_seed: d.rng_seed,
            output_sigmoid: d.output_sigmoid,
        })
    }
}

/// Identity-map loss of one batch recorded on `g`.
pub fn identity_loss(
    g: &mut Graph,
    config: &ArchNetConfig,
    bound: &Bound,
    batch: &Tensor,
    loss: LossKind,
) -> Result<archnet_tensor::Var> {
    let x = g.constant(batch.clone());
    let target = g.constant(batch.clone());
    let h = config.encoder_stack().forward_graph(g, x, bound)?;
    let mut y = config.decoder_stack()?.forward_graph(g, h, bound)?;
    Ok(match loss {
        LossKind::Mse => g.mse_loss(y, target)?,
        LossKind::Bce => {
            y = g.sigmoid(y)?;
            g.bce_loss(y, target)?
        }
    })
}

/// Trains decoder(encoder(x)) toward x with Adam, one loss value per epoch.
///
/// Batch order is shuffled per epoch from `net.rng_seed` and the epoch index, so
/// training in several calls matches training in one.
pub fn train_identity(
    mut net: TrainedArchNet,
    data: &Dataset,
    opts: &TrainOptions,
    state: &mut AdamState,
) -> Result<TrainedArchNet> {
    net.check_input(data, net.config.input_shape)?;
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    if opts.epochs == 0 {
        return Ok(net);
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if *data.representation() != Representation::Plain {
        return Err(Error::Dataset(format!(
            "identity training needs plain data, got {}",
            data.representation()
        )));
    }
    net.output_sigmoid = opts.loss == LossKind::Bce;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let epoch_base = net.loss_curve.len();
    for epoch in 0..opts.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(net.rng_seed ^ 0x5eed_a7c4);
        rng.set_stream((epoch_base + epoch) as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(opts.batch_size).enumerate() {
            let batch = data.images().select_outer(chunk)?;
            let mut params = net.encoder_params.clone();
            params.extend(net.decoder_params.clone());
            let mut g = Graph::new();
            let bound = Bound::parameters(&mut g, &params);
            let loss = identity_loss(&mut g, &net.config, &bound, &batch, opts.loss)?;
            let value = g.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch_base + epoch + 1,
                    batch: b,
                });
            }
            total += value * chunk.len() as f64;
            g.backward(loss)?;
            let grads = bound.grads(&g);
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            adam_step(
                net.encoder_params.tensors_mut().chain(net.decoder_params.tensors_mut()),
                &grad_refs,
                state,
            )?;
        }
        net.loss_curve.push(total / data.len() as f64);
    }
    Ok(net)
}

/// Epochs during which [`train_new`] watches for a collapsed ReLU layer.
pub const COLLAPSE_WINDOW: usize = 10;
/// Re-initializations [`train_new`] tries before keeping a collapsed net.
pub const MAX_REINITS: u64 = 4;

/// Builds and trains with a fresh Adam state at `lr`.
///
/// If a ReLU layer loses every active unit within the first [`COLLAPSE_WINDOW`]
/// epochs, the net is re-drawn from a seed derived from `seed` and training
/// restarts. `rng_seed` of the result is the seed that was kept.
pub fn train_new(
    config: ArchNetConfig,
    data: &Dataset,
    opts: &TrainOptions,
    lr: f64,
    seed: u64,
) -> Result<TrainedArchNet> {
    let window = opts.epochs.min(COLLAPSE_WINDOW);
    let mut init_seed = seed;
    for attempt in 0..=MAX_REINITS {
        let mut net = build_archnet(config.clone(), init_seed)?;
        let mut state = AdamState::new(AdamConfig::with_lr(lr));
        let mut collapsed = false;
        for _ in 0..window {
            net = train_identity(net, data, &TrainOptions { epochs: 1, ..*opts }, &mut state)?;
            if attempt < MAX_REINITS && net.dead_relu(data)?.is_some() {
                collapsed = true;
                break;
            }
        }
        if !collapsed {
            let rest = TrainOptions {
                epochs: opts.epochs - window,
                ..*opts
            };
            return train_identity(net, data, &rest, &mut state);
        }
        init_seed = seed.wrapping_add((attempt + 1) * 0x9e37_79b9_7f4a_7c15);
    }
    unreachable!("the last attempt never reports a collapse")
}

/// Mean per-pixel |decrypt(encrypt(x)) - x|.
pub fn reconstruction_error(net: &TrainedArchNet, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let back = net.decrypt(&net.encrypt(data)?)?;
    let n = data.images().len() as f64;
    Ok(back
        .images()
        .data()
        .iter()
        .zip(data.images().data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}
