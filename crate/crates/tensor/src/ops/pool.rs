use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Window max over `[N, C, H, W]`. Also returns, per output element, the flat
/// input index that produced the max (first occurrence wins on ties).
pub fn maxpool2d(input: &Tensor, k: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    const OP: &str = "maxpool2d";
    let &[n, c, h, w] = input.shape() else {
        return Err(TensorError::Rank {
            op: OP,
            expected: 4,
            actual: input.shape().to_vec(),
        });
    };
    if k == 0 || stride == 0 {
        return Err(TensorError::invalid(OP, "window and stride must be >= 1"));
    }
    if k > h || k > w {
        return Err(TensorError::mismatch(OP, "window vs spatial size", h.min(w), k));
    }
    let hout = (h - k) / stride + 1;
    let wout = (w - k) / stride + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * hout * wout);
    let mut argmax = Vec::with_capacity(n * c * hout * wout);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..hout {
            for ox in 0..wout {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, hout, wout], out)?, argmax))
}

pub fn maxpool2d_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let mut gx = Tensor::zeros(input_shape.to_vec());
    if argmax.len() != grad_out.len() {
        return Err(TensorError::mismatch("maxpool2d_backward", "grad_out length", argmax.len(), grad_out.len()));
    }
    let gd = gx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        gd[idx] += g;
    }
    Ok(gx)
}
