//! Layer vocabulary shared by the ArchNet halves and the base classifier.

use archnet_tensor::ops::{self, conv_output_len, conv_transpose_output_len};
use archnet_tensor::{Graph, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    /// On a `C x H x W` activation the input is flattened and the output is
    /// reshaped to `(out_features / (H*W)) x H x W`.
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    Sigmoid,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
}

impl LayerSpec {
    /// Shape-preserving 3x3 convolution (stride 1, padding 1).
    pub fn conv(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    /// 2x2 stride-2 convolution that halves the spatial size.
    pub fn conv_down(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: 2,
            stride: 2,
            padding: 0,
        }
    }

    /// 2x2 stride-2 transposed convolution that doubles the spatial size.
    pub fn conv_transpose(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::ConvTranspose {
            in_channels,
            out_channels,
            kernel: 2,
            stride: 2,
        }
    }

    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Linear {
            in_features,
            out_features,
        }
    }

    pub fn is_conv_transpose(&self) -> bool {
        matches!(self, LayerSpec::ConvTranspose { .. })
    }

    /// (weight shape, bias shape, fan-in) for layers with parameters.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>, usize)> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
                in_channels * kernel * kernel,
            )),
            LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![in_channels, out_channels, kernel, kernel],
                vec![out_channels],
                in_channels * kernel * kernel,
            )),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features], in_features)),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .map(|(w, b, _)| w.iter().product::<usize>() + b[0])
            .unwrap_or(0)
    }

    /// Output activation shape, or a description of the incompatibility.
    pub fn output_shape(&self, input: ActShape) -> std::result::Result<ActShape, String> {
        use ActShape::*;
        match (*self, input) {
            (
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                },
                Spatial(c, h, w),
            ) => {
                if c != in_channels {
                    return Err(format!("expects {in_channels} input channels, receives {c}"));
                }
                let ho = conv_output_len(h, kernel, stride, padding);
                let wo = conv_output_len(w, kernel, stride, padding);
                match (ho, wo) {
                    (Some(ho), Some(wo)) => Ok(Spatial(out_channels, ho, wo)),
                    _ => Err(format!("kernel {kernel} does not fit a {h}x{w} input")),
                }
            }
            (
                LayerSpec::ConvTranspose {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                },
                Spatial(c, h, w),
            ) => {
                if c != in_channels {
                    return Err(format!("expects {in_channels} input channels, receives {c}"));
                }
                Ok(Spatial(
                    out_channels,
                    conv_transpose_output_len(h, kernel, stride),
                    conv_transpose_output_len(w, kernel, stride),
                ))
            }
            (LayerSpec::Conv { .. } | LayerSpec::ConvTranspose { .. }, Flat(d)) => {
                Err(format!("needs a C x H x W input, receives a flat vector of {d}"))
            }
            (
                LayerSpec::Linear {
                    in_features,
                    out_features,
                },
                input,
            ) => {
                if input.numel() != in_features {
                    return Err(format!("expects {in_features} input features, receives {}", input.numel()));
                }
                Ok(match input {
                    Spatial(_, h, w) if out_features % (h * w) == 0 => Spatial(out_features / (h * w), h, w),
                    _ => Flat(out_features),
                })
            }
            (LayerSpec::MaxPool { kernel, stride }, Spatial(c, h, w)) => {
                if kernel == 0 || stride == 0 || kernel > h || kernel > w {
                    return Err(format!("pool window {kernel} does not fit a {h}x{w} input"));
                }
                Ok(Spatial(c, (h - kernel) / stride + 1, (w - kernel) / stride + 1))
            }
            (LayerSpec::MaxPool { .. }, Flat(_)) => Err("pooling needs a C x H x W input".into()),
            (LayerSpec::Flatten, s) => Ok(Flat(s.numel())),
            (LayerSpec::Relu | LayerSpec::Sigmoid, s) => Ok(s),
        }
    }
}

impl std::fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => write!(f, "Conv2d({in_channels},{out_channels},k{kernel},s{stride})"),
            LayerSpec::ConvTranspose {
                in_channels,
                out_channels,
                ..
            } => write!(f, "ConvTrans2d({in_channels},{out_channels})"),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => write!(f, "Linear({in_features},{out_features})"),
            LayerSpec::Relu => f.write_str("Relu()"),
            LayerSpec::Sigmoid => f.write_str("Sigmoid()"),
            LayerSpec::MaxPool { kernel, stride } => write!(f, "MaxPool2d({kernel},{stride})"),
            LayerSpec::Flatten => f.write_str("Flatten()"),
        }
    }
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActShape {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl ActShape {
    pub fn numel(&self) -> usize {
        match *self {
            ActShape::Spatial(c, h, w) => c * h * w,
            ActShape::Flat(d) => d,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            ActShape::Spatial(c, h, w) => vec![c, h, w],
            ActShape::Flat(d) => vec![d],
        }
    }

    pub fn from_chw([c, h, w]: [usize; 3]) -> Self {
        ActShape::Spatial(c, h, w)
    }
}

/// A named stack of layers with a fixed per-sample input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stack {
    pub name: String,
    pub input: ActShape,
    pub layers: Vec<LayerSpec>,
}

impl Stack {
    /// Shapes after every layer; errors name the offending layer and its predecessor.
    pub fn plan(&self) -> Result<Vec<ActShape>> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input;
        for (i, layer) in self.layers.iter().enumerate() {
            cur = layer.output_shape(cur).map_err(|why| {
                let prev = if i == 0 {
                    format!("{} input {:?}", self.name, self.input.dims())
                } else {
                    format!("{}[{}] {}", self.name, i - 1, self.layers[i - 1])
                };
                Error::Config(format!("{}[{i}] {layer} is incompatible with {prev}: {why}", self.name))
            })?;
            shapes.push(cur);
        }
        Ok(shapes)
    }

    pub fn output(&self) -> Result<ActShape> {
        Ok(self.plan()?.last().copied().unwrap_or(self.input))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    fn param_names(&self, i: usize) -> (String, String) {
        (format!("{}.{i}.weight", self.name), format!("{}.{i}.bias", self.name))
    }

    /// Weights from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet {
        let mut p = ParamSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((ws, bs, fan_in)) = layer.param_shapes() {
                let (wn, bn) = self.param_names(i);
                p.insert(wn, Tensor::uniform(ws, 1.0 / (fan_in as f64).sqrt(), rng));
                p.insert(bn, Tensor::zeros(bs));
            }
        }
        p
    }

    /// Checks that `params` holds exactly this stack's tensors with the right shapes.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let mut expected = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((ws, bs, _)) = layer.param_shapes() {
                let (wn, bn) = self.param_names(i);
                for (name, shape) in [(wn, ws), (bn, bs)] {
                    let t = params
                        .get(&name)
                        .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
                    if t.shape() != shape.as_slice() {
                        return Err(Error::Shape {
                            expected: shape,
                            actual: t.shape().to_vec(),
                        });
                    }
                    expected += 1;
                }
            }
        }
        let own = params.names().filter(|n| n.starts_with(&format!("{}.", self.name))).count();
        if own != expected {
            return Err(Error::Config(format!(
                "{}: expected {expected} parameter tensors, found {own}",
                self.name
            )));
        }
        Ok(())
    }

    /// Records the forward pass of a batch on `g` using leaves from `bound`.
    pub fn forward_graph(&self, g: &mut Graph, x: Var, bound: &Bound) -> Result<Var> {
        let vars = |name: &str| bound.get(name);
        let mut cur = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let (wn, bn) = self.param_names(i);
            cur = match *layer {
                LayerSpec::Conv { stride, padding, .. } => g.conv2d(cur, vars(&wn)?, vars(&bn)?, stride, padding)?,
                LayerSpec::ConvTranspose { stride, .. } => g.conv_transpose2d(cur, vars(&wn)?, vars(&bn)?, stride)?,
                LayerSpec::Linear { .. } => {
                    let shape = g.value(cur).shape().to_vec();
                    let flat = g.flatten(cur)?;
                    let y = g.linear(flat, vars(&wn)?, vars(&bn)?)?;
                    match shape.as_slice() {
                        [n, _, h, w] if g.value(y).shape()[1] % (h * w) == 0 => {
                            let c = g.value(y).shape()[1] / (h * w);
                            g.reshape(y, vec![*n, c, *h, *w])?
                        }
                        _ => y,
                    }
                }
                LayerSpec::Relu => g.relu(cur)?,
                LayerSpec::Sigmoid => g.sigmoid(cur)?,
                LayerSpec::MaxPool { kernel, stride } => g.maxpool2d(cur, kernel, stride)?,
                LayerSpec::Flatten => g.flatten(cur)?,
            };
        }
        Ok(cur)
    }

    /// Tape-free forward pass for inference.
    pub fn forward(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        self.forward_inspect(params, x, |_, _, _| {})
    }

    /// Like [`Stack::forward`], calling `visit(index, layer, input)` before each layer.
    pub fn forward_inspect(
        &self,
        params: &ParamSet,
        x: &Tensor,
        mut visit: impl FnMut(usize, &LayerSpec, &Tensor),
    ) -> Result<Tensor> {
        let get = |name: &str| {
            params
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
        };
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            visit(i, layer, &cur);
            let (wn, bn) = self.param_names(i);
            cur = match *layer {
                LayerSpec::Conv { stride, padding, .. } => ops::conv2d(&cur, get(&wn)?, get(&bn)?, stride, padding)?,
                LayerSpec::ConvTranspose { stride, .. } => ops::conv_transpose2d(&cur, get(&wn)?, get(&bn)?, stride)?,
                LayerSpec::Linear { .. } => {
                    let shape = cur.shape().to_vec();
                    let n = shape[0];
                    let flat = cur.reshape(vec![n, shape[1..].iter().product()])?;
                    let y = ops::linear(&flat, get(&wn)?, get(&bn)?)?;
                    match shape.as_slice() {
                        [_, _, h, w] if y.shape()[1] % (h * w) == 0 => {
                            let c = y.shape()[1] / (h * w);
                            y.reshape(vec![n, c, *h, *w])?
                        }
                        _ => y,
                    }
                }
                LayerSpec::Relu => ops::relu(&cur),
                LayerSpec::Sigmoid => ops::sigmoid(&cur),
                LayerSpec::MaxPool { kernel, stride } => ops::maxpool2d(&cur, kernel, stride)?.0,
                LayerSpec::Flatten => {
                    let n = cur.shape()[0];
                    let rest = cur.shape()[1..].iter().product::<usize>();
                    cur.reshape(vec![n, rest])?
                }
            };
        }
        Ok(cur)
    }
}

/// Graph leaves for a parameter set, in the set's order.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl Bound {
    /// Binds every tensor as a differentiable leaf.
    pub fn parameters(g: &mut Graph, params: &ParamSet) -> Self {
        Self::bind(g, params, true)
    }

    /// Binds every tensor as a constant leaf.
    pub fn constants(g: &mut Graph, params: &ParamSet) -> Self {
        Self::bind(g, params, false)
    }

    fn bind(g: &mut Graph, params: &ParamSet, differentiable: bool) -> Self {
        let mut b = Bound::default();
        for (name, t) in params.iter() {
            let v = if differentiable {
                g.parameter(t.clone())
            } else {
                g.constant(t.clone())
            };
            b.push(name, v);
        }
        b
    }

    pub fn push(&mut self, name: impl Into<String>, v: Var) {
        self.names.push(name.into());
        self.vars.push(v);
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients after `backward`, zero where a leaf did not influence the loss.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| {
                g.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(g.value(v).shape().to_vec()))
            })
            .collect()
    }
}

/// Runs `f` over `[start, end)` batches of the leading axis and concatenates the results.
pub(crate) fn batched(
    x: &Tensor,
    batch: usize,
    out_sample: &[usize],
    mut f: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    let n = x.shape()[0];
    if n == 0 {
        let mut shape = vec![0];
        shape.extend_from_slice(out_sample);
        return Ok(Tensor::zeros(shape));
    }
    let mut parts = Vec::with_capacity(n.div_ceil(batch));
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        parts.push(f(&x.slice_outer(start..end)?)?);
        start = end;
    }
    Ok(Tensor::concat_outer(&parts)?)
}
