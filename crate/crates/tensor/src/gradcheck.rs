//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Scalar-valued computation built on a fresh graph from parameter leaves.
pub trait ScalarFn: Fn(&mut Graph, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Graph, &[Var]) -> Result<Var>> ScalarFn for F {}

fn evaluate(f: &impl ScalarFn, inputs: &[Tensor]) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.value(out)
        .item()
        .ok_or_else(|| TensorError::NonScalarLoss(g.value(out).shape().to_vec()))
}

fn analytic(f: &impl ScalarFn, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect())
}

fn check_step(h: f64) -> Result<()> {
    if !(1e-6..=1e-4).contains(&h) {
        return Err(TensorError::invalid("grad_check", format!("step {h} outside [1e-6, 1e-4]")));
    }
    Ok(())
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// Max over every input coordinate of `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check(f: impl ScalarFn, inputs: &[Tensor], h: f64) -> Result<f64> {
    check_step(h)?;
    let coords: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.len()).collect()).collect();
    check_coords(&f, inputs, h, &coords)
}

/// Like [`grad_check`] but probes at most `per_input` random coordinates of each input.
pub fn grad_check_sampled<R: Rng + ?Sized>(
    f: impl ScalarFn,
    inputs: &[Tensor],
    h: f64,
    per_input: usize,
    rng: &mut R,
) -> Result<f64> {
    check_step(h)?;
    let coords: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            if t.len() <= per_input {
                (0..t.len()).collect()
            } else {
                sample(rng, t.len(), per_input).into_vec()
            }
        })
        .collect();
    check_coords(&f, inputs, h, &coords)
}

fn check_coords(f: &impl ScalarFn, inputs: &[Tensor], h: f64, coords: &[Vec<usize>]) -> Result<f64> {
    let grads = analytic(f, inputs)?;
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (ti, idxs) in coords.iter().enumerate() {
        for &i in idxs {
            let orig = probe[ti].data()[i];
            probe[ti].data_mut()[i] = orig + h;
            let plus = evaluate(f, &probe)?;
            probe[ti].data_mut()[i] = orig - h;
            let minus = evaluate(f, &probe)?;
            probe[ti].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(grads[ti].data()[i], numeric));
        }
    }
    Ok(worst)
}
