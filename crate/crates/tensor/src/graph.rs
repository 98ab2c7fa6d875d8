//! Single-assignment tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order and only reference earlier nodes,
//! so the tape is acyclic and its index order is a topological order.

use crate::error::{Result, TensorError};
use crate::ops;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Sigmoid(Var),
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Mse(Var, Var),
    Bce(Var, Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    is_param: bool,
    #[cfg(debug_assertions)]
    finite: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backpropagated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient in [`Graph::backward`].
    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that is never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, is_param: bool) -> Var {
        #[cfg(debug_assertions)]
        let finite = value.is_finite();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: is_param,
            is_param,
            #[cfg(debug_assertions)]
            finite,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownNode(v.0))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass w.r.t. a parameter leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Drops gradients so that `backward` may run again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backpropagated = false;
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        #[cfg(debug_assertions)]
        let finite = {
            let inputs_finite = inputs.iter().all(|v| self.nodes[v.0].finite);
            let finite = value.is_finite();
            debug_assert!(!inputs_finite || finite, "non-finite output from {op:?} on finite inputs");
            finite
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            is_param: false,
            #[cfg(debug_assertions)]
            finite,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d(
            &self.node(input)?.value,
            &self.node(kernel)?.value,
            &self.node(bias)?.value,
            stride,
            padding,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            &[input, kernel, bias],
        ))
    }

    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let out = ops::conv_transpose2d(
            &self.node(input)?.value,
            &self.node(kernel)?.value,
            &self.node(bias)?.value,
            stride,
        )?;
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                stride,
            },
            &[input, kernel, bias],
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(&self.node(input)?.value, &self.node(weight)?.value, &self.node(bias)?.value)?;
        Ok(self.push(out, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = ops::relu(&self.node(input)?.value);
        Ok(self.push(out, Op::Relu(input), &[input]))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        let out = ops::sigmoid(&self.node(input)?.value);
        Ok(self.push(out, Op::Sigmoid(input), &[input]))
    }

    pub fn maxpool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = ops::maxpool2d(&self.node(input)?.value, k, stride)?;
        Ok(self.push(out, Op::MaxPool2d { input, argmax }, &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.node(input)?.value.clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(input), &[input]))
    }

    /// Collapses all trailing axes: `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.node(input)?.value.shape().to_vec();
        let n = shape.first().copied().unwrap_or(1);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(input, vec![n, rest])
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(TensorError::invalid(op, format!("operand shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes("add", a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect())?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shapes("mul", a, b)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect())?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s = self.node(input)?.value.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(input), &[input]))
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let l = ops::mse(&self.node(pred)?.value, &self.node(target)?.value)?;
        Ok(self.push(Tensor::scalar(l), Op::Mse(pred, target), &[pred, target]))
    }

    pub fn bce_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let l = ops::bce(&self.node(pred)?.value, &self.node(target)?.value)?;
        Ok(self.push(Tensor::scalar(l), Op::Bce(pred, target), &[pred, target]))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (l, probs) = ops::softmax_cross_entropy(&self.node(logits)?.value, labels)?;
        Ok(self.push(
            Tensor::scalar(l),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Back-propagates from a scalar `loss`. Afterwards [`Graph::grad`] returns
    /// d loss / d p for every parameter leaf `p`; intermediate gradients are dropped.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backpropagated {
            return Err(TensorError::AlreadyBackpropagated);
        }
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let needs = |v: &Var| self.nodes[v.0].requires_grad;
            let val = |v: &Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {
                    if node.is_param {
                        grads[id] = Some(g);
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let (gx, gk, gb) = ops::conv2d_backward(val(input), val(kernel), &g, *stride, *padding, needs(input))?;
                    accumulate_opt(&mut grads, *input, gx);
                    accumulate_if(&mut grads, *kernel, gk, needs(kernel));
                    accumulate_if(&mut grads, *bias, gb, needs(bias));
                }
                Op::ConvTranspose2d {
                    input,
                    kernel,
                    bias,
                    stride,
                } => {
                    let (gx, gk, gb) = ops::conv_transpose2d_backward(val(input), val(kernel), &g, *stride, needs(input))?;
                    accumulate_opt(&mut grads, *input, gx);
                    accumulate_if(&mut grads, *kernel, gk, needs(kernel));
                    accumulate_if(&mut grads, *bias, gb, needs(bias));
                }
                Op::Linear { input, weight, bias } => {
                    let (gx, gw, gb) = ops::linear_backward(val(input), val(weight), &g, needs(input))?;
                    accumulate_opt(&mut grads, *input, gx);
                    accumulate_if(&mut grads, *weight, gw, needs(weight));
                    accumulate_if(&mut grads, *bias, gb, needs(bias));
                }
                Op::Relu(x) => {
                    let gx = zip_map(&g, val(x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut grads, *x, gx);
                }
                Op::MaxPool2d { input, argmax } => {
                    let gx = ops::maxpool2d_backward(val(input).shape(), argmax, &g)?;
                    accumulate(&mut grads, *input, gx);
                }
                Op::Reshape(x) => {
                    let gx = g.reshape(val(x).shape().to_vec())?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate_if(&mut grads, *b, g.clone(), needs(b));
                    accumulate_if(&mut grads, *a, g, needs(a));
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads, *a, zip_map(&g, val(b), |gv, bv| gv * bv));
                    }
                    if needs(b) {
                        accumulate(&mut grads, *b, zip_map(&g, val(a), |gv, av| gv * av));
                    }
                }
                Op::Sum(x) => {
                    let s = g.data()[0];
                    accumulate(&mut grads, *x, Tensor::full(val(x).shape().to_vec(), s));
                }
                Op::Mse(p, t) => {
                    let s = g.data()[0];
                    let dp: Vec<f64> = ops::loss::mse_grad(val(p), val(t)).into_iter().map(|v| v * s).collect();
                    if needs(t) {
                        let dt = dp.iter().map(|v| -v).collect();
                        accumulate(&mut grads, *t, Tensor::new(val(t).shape().to_vec(), dt)?);
                    }
                    if needs(p) {
                        accumulate(&mut grads, *p, Tensor::new(val(p).shape().to_vec(), dp)?);
                    }
                }
                Op::Bce(p, t) => {
                    let s = g.data()[0];
                    let (dp, dt) = ops::loss::bce_grad(val(p), val(t));
                    if needs(p) {
                        let dp = dp.into_iter().map(|v| v * s).collect();
                        accumulate(&mut grads, *p, Tensor::new(val(p).shape().to_vec(), dp)?);
                    }
                    if needs(t) {
                        let dt = dt.into_iter().map(|v| v * s).collect();
                        accumulate(&mut grads, *t, Tensor::new(val(t).shape().to_vec(), dt)?);
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let s = g.data()[0];
                    let k = val(logits).shape()[1];
                    let dl = ops::loss::softmax_cross_entropy_grad(probs, labels, k)
                        .into_iter()
                        .map(|v| v * s)
                        .collect();
                    accumulate(&mut grads, *logits, Tensor::new(val(logits).shape().to_vec(), dl)?);
                }
            }
        }
        self.grads = grads;
        self.backpropagated = true;
        Ok(())
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_fn(a.shape().to_vec(), |i| f(a.data()[i], b.data()[i]))
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (d, s) in existing.data_mut().iter_mut().zip(g.data()) {
                *d += s;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_if(grads: &mut [Option<Tensor>], v: Var, g: Tensor, needed: bool) {
    if needed {
        accumulate(grads, v, g);
    }
}

fn accumulate_opt(grads: &mut [Option<Tensor>], v: Var, g: Option<Tensor>) {
    if let Some(g) = g {
        accumulate(grads, v, g);
    }
}
