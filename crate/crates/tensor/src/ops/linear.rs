use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn dims(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    const OP: &str = "linear";
    let &[n, din] = input.shape() else {
        return Err(TensorError::Rank {
            op: OP,
            expected: 2,
            actual: input.shape().to_vec(),
        });
    };
    let &[dout, wdin] = weight.shape() else {
        return Err(TensorError::Rank {
            op: OP,
            expected: 2,
            actual: weight.shape().to_vec(),
        });
    };
    if wdin != din {
        return Err(TensorError::mismatch(OP, "weight in_features (dim 1)", din, wdin));
    }
    Ok((n, din, dout))
}

/// `out[n, j] = sum_i input[n, i] * weight[j, i] + bias[j]`.
pub fn linear(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, din, dout) = dims(input, weight)?;
    if bias.shape() != [dout] {
        return Err(TensorError::mismatch("linear", "bias length (out_features)", dout, bias.len()));
    }
    let x = input.data();
    let w = weight.data();
    let b = bias.data();
    let mut out = vec![0.0; n * dout];
    for (xr, or) in x.chunks_exact(din.max(1)).zip(out.chunks_exact_mut(dout.max(1))).take(n) {
        for (j, o) in or.iter_mut().enumerate() {
            let wr = &w[j * din..][..din];
            *o = b[j] + xr.iter().zip(wr).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    Tensor::new(vec![n, dout], out)
}

/// Returns (grad_input if requested, grad_weight, grad_bias).
pub fn linear_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let (n, din, dout) = dims(input, weight)?;
    if grad_out.shape() != [n, dout] {
        return Err(TensorError::invalid(
            "linear_backward",
            format!("grad_out shape {:?}, expected [{n}, {dout}]", grad_out.shape()),
        ));
    }
    let x = input.data();
    let w = weight.data();
    let go = grad_out.data();
    let mut gx = if need_input { vec![0.0; n * din] } else { Vec::new() };
    let mut gw = vec![0.0; dout * din];
    let mut gb = vec![0.0; dout];
    for s in 0..n {
        let xr = &x[s * din..][..din];
        let gr = &go[s * dout..][..dout];
        for (j, &gv) in gr.iter().enumerate() {
            if gv == 0.0 {
                continue;
            }
            gb[j] += gv;
            let gwr = &mut gw[j * din..][..din];
            for (d, xv) in gwr.iter_mut().zip(xr) {
                *d += gv * xv;
            }
            if need_input {
                let wr = &w[j * din..][..din];
                let gxr = &mut gx[s * din..][..din];
                for (d, wv) in gxr.iter_mut().zip(wr) {
                    *d += gv * wv;
                }
            }
        }
    }
    let gx = if need_input {
        Some(Tensor::new(vec![n, din], gx)?)
    } else {
        None
    };
    Ok((gx, Tensor::new(vec![dout, din], gw)?, Tensor::new(vec![dout], gb)?))
}
