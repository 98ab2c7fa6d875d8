use crate::error::{Result, TensorError};
use crate::ops::activation::softmax_rows;
use crate::tensor::Tensor;

/// Clamp applied to predictions before taking logarithms in BCE.
pub const BCE_EPS: f64 = 1e-7;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::invalid(
            op,
            format!("pred shape {:?} != target shape {:?}", a.shape(), b.shape()),
        ));
    }
    if a.is_empty() {
        return Err(TensorError::invalid(op, "empty tensors"));
    }
    Ok(())
}

pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape("mse_loss", pred, target)?;
    let s: f64 = pred.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / pred.len() as f64)
}

/// d mse / d pred; the target gradient is its negation.
pub fn mse_grad(pred: &Tensor, target: &Tensor) -> Vec<f64> {
    let scale = 2.0 / pred.len() as f64;
    pred.data().iter().zip(target.data()).map(|(p, t)| scale * (p - t)).collect()
}

pub fn bce(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape("bce_loss", pred, target)?;
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(-s / pred.len() as f64)
}

/// Returns (d bce / d pred, d bce / d target). The clamp has zero slope outside [eps, 1-eps].
pub fn bce_grad(pred: &Tensor, target: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let n = pred.len() as f64;
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            let dp = if (BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                (pc - t) / (pc * (1.0 - pc)) / n
            } else {
                0.0
            };
            let dt = -(pc.ln() - (1.0 - pc).ln()) / n;
            (dp, dt)
        })
        .unzip()
}

fn check_logits(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    const OP: &str = "softmax_cross_entropy";
    let &[n, k] = logits.shape() else {
        return Err(TensorError::Rank {
            op: OP,
            expected: 2,
            actual: logits.shape().to_vec(),
        });
    };
    if labels.len() != n {
        return Err(TensorError::mismatch(OP, "label count (batch dim)", n, labels.len()));
    }
    if n == 0 {
        return Err(TensorError::invalid(OP, "empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::invalid(OP, format!("label {bad} out of range for {k} classes")));
    }
    Ok((n, k))
}

/// Mean negative log-likelihood of `labels` under row-softmax of `logits`.
/// Returns the loss and the softmax probabilities (reused by the gradient).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (n, k) = check_logits(logits, labels)?;
    let probs = softmax_rows(logits.data(), k);
    let nll: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -(probs[i * k + l].max(f64::MIN_POSITIVE)).ln())
        .sum();
    Ok((nll / n as f64, probs))
}

pub fn softmax_cross_entropy_grad(probs: &[f64], labels: &[usize], k: usize) -> Vec<f64> {
    let n = labels.len() as f64;
    let mut g: Vec<f64> = probs.iter().map(|p| p / n).collect();
    for (i, &l) in labels.iter().enumerate() {
        g[i * k + l] -= 1.0 / n;
    }
    g
}
