//! Direct (loop-based) 2-D convolution and transposed convolution.
//!
//! Layouts: activations are `[N, C, H, W]`; conv kernels are `[Cout, Cin, kh, kw]`;
//! transposed-conv kernels are `[Cin, Cout, kh, kw]`. Convolution is
//! cross-correlation, the kernel is never flipped.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub hout: usize,
    pub wout: usize,
}

fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(TensorError::Rank {
            op,
            expected: 4,
            actual: t.shape().to_vec(),
        }),
    }
}

fn check_bias(op: &'static str, bias: &Tensor, cout: usize) -> Result<()> {
    if bias.rank() != 1 {
        return Err(TensorError::Rank {
            op,
            expected: 1,
            actual: bias.shape().to_vec(),
        });
    }
    if bias.len() != cout {
        return Err(TensorError::mismatch(op, "bias length (out channels)", cout, bias.len()));
    }
    Ok(())
}

/// Output size of a strided, padded convolution along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output size of a transposed convolution (no padding) along one axis.
pub fn conv_transpose_output_len(input: usize, kernel: usize, stride: usize) -> usize {
    if input == 0 {
        return 0;
    }
    (input - 1) * stride + kernel
}

pub(crate) fn conv2d_geometry(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    const OP: &str = "conv2d";
    let [n, cin, h, w] = dims4(OP, input)?;
    let [cout, kcin, kh, kw] = dims4(OP, kernel)?;
    if kcin != cin {
        return Err(TensorError::mismatch(OP, "kernel in_channels (dim 1)", cin, kcin));
    }
    check_bias(OP, bias, cout)?;
    if stride == 0 {
        return Err(TensorError::invalid(OP, "stride must be >= 1"));
    }
    let hout = conv_output_len(h, kh, stride, padding).ok_or_else(|| {
        TensorError::mismatch(OP, "kernel height vs padded input height", h + 2 * padding, kh)
    })?;
    let wout = conv_output_len(w, kw, stride, padding).ok_or_else(|| {
        TensorError::mismatch(OP, "kernel width vs padded input width", w + 2 * padding, kw)
    })?;
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        padding,
        hout,
        wout,
    })
}

pub(crate) fn conv_transpose2d_geometry(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<Geometry> {
    const OP: &str = "conv_transpose2d";
    let [n, cin, h, w] = dims4(OP, input)?;
    let [kcin, cout, kh, kw] = dims4(OP, kernel)?;
    if kcin != cin {
        return Err(TensorError::mismatch(OP, "kernel in_channels (dim 0)", cin, kcin));
    }
    check_bias(OP, bias, cout)?;
    if stride == 0 {
        return Err(TensorError::invalid(OP, "stride must be >= 1"));
    }
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        padding: 0,
        hout: conv_transpose_output_len(h, kh, stride),
        wout: conv_transpose_output_len(w, kw, stride),
    })
}

/// Output indices `o` for which `o * stride + offset - padding` lands in `0..input`.
#[inline]
fn valid_range(out: usize, input: usize, offset: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > offset {
        (padding - offset).div_ceil(stride)
    } else {
        0
    };
    if input + padding < offset + 1 {
        return (0, 0);
    }
    let hi = ((input - 1 + padding - offset) / stride + 1).min(out);
    (lo.min(hi), hi)
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = conv2d_geometry(input, kernel, bias, stride, padding)?;
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; g.n * g.cout * g.hout * g.wout];
    let in_plane = g.h * g.w;
    let out_plane = g.hout * g.wout;
    for n in 0..g.n {
        for co in 0..g.cout {
            let o = &mut out[(n * g.cout + co) * out_plane..][..out_plane];
            o.fill(bias.data()[co]);
            for ci in 0..g.cin {
                let xi = &x[(n * g.cin + ci) * in_plane..][..in_plane];
                for ky in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.hout, g.h, ky, g.stride, g.padding);
                    for kx in 0..g.kw {
                        let wv = k[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        let (xlo, xhi) = valid_range(g.wout, g.w, kx, g.stride, g.padding);
                        if xlo >= xhi {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = oy * g.stride + ky - g.padding;
                            let orow = &mut o[oy * g.wout..][..g.wout];
                            let irow = &xi[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let ix0 = xlo + kx - g.padding;
                                for (ov, iv) in orow[xlo..xhi].iter_mut().zip(&irow[ix0..ix0 + (xhi - xlo)]) {
                                    *ov += wv * iv;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    orow[ox] += wv * irow[ox * g.stride + kx - g.padding];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.hout, g.wout], out)
}

/// Gradients of `conv2d` w.r.t. input (only when `need_input`), kernel and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let cout = kernel.shape().first().copied().unwrap_or(0);
    let g = conv2d_geometry(input, kernel, &Tensor::zeros(vec![cout]), stride, padding)?;
    let expect = [g.n, g.cout, g.hout, g.wout];
    if grad_out.shape() != expect {
        return Err(TensorError::invalid(
            "conv2d_backward",
            format!("grad_out shape {:?}, expected {:?}", grad_out.shape(), expect),
        ));
    }
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let mut gx = if need_input { vec![0.0; x.len()] } else { Vec::new() };
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.cout];
    let in_plane = g.h * g.w;
    let out_plane = g.hout * g.wout;
    for n in 0..g.n {
        for co in 0..g.cout {
            let gop = &go[(n * g.cout + co) * out_plane..][..out_plane];
            gb[co] += gop.iter().sum::<f64>();
            for ci in 0..g.cin {
                let xoff = (n * g.cin + ci) * in_plane;
                for ky in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.hout, g.h, ky, g.stride, g.padding);
                    for kx in 0..g.kw {
                        let kidx = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                        let wv = k[kidx];
                        let (xlo, xhi) = valid_range(g.wout, g.w, kx, g.stride, g.padding);
                        if xlo >= xhi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in ylo..yhi {
                            let iy = oy * g.stride + ky - g.padding;
                            let grow = &gop[oy * g.wout..][..g.wout];
                            let irow_off = xoff + iy * g.w;
                            if g.stride == 1 {
                                let ix0 = xlo + kx - g.padding;
                                let span = xhi - xlo;
                                let irow = &x[irow_off + ix0..][..span];
                                let gsl = &grow[xlo..xhi];
                                acc += irow.iter().zip(gsl).map(|(a, b)| a * b).sum::<f64>();
                                if need_input {
                                    let gxr = &mut gx[irow_off + ix0..][..span];
                                    for (d, s) in gxr.iter_mut().zip(gsl) {
                                        *d += wv * s;
                                    }
                                }
                            } else {
                                for ox in xlo..xhi {
                                    let ix = ox * g.stride + kx - g.padding;
                                    acc += x[irow_off + ix] * grow[ox];
                                    if need_input {
                                        gx[irow_off + ix] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    let gx = if need_input {
        Some(Tensor::new(input.shape().to_vec(), gx)?)
    } else {
        None
    };
    Ok((gx, Tensor::new(kernel.shape().to_vec(), gk)?, Tensor::new(vec![g.cout], gb)?))
}

pub fn conv_transpose2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let g = conv_transpose2d_geometry(input, kernel, bias, stride)?;
    let x = input.data();
    let k = kernel.data();
    let in_plane = g.h * g.w;
    let out_plane = g.hout * g.wout;
    let mut out = vec![0.0; g.n * g.cout * out_plane];
    for n in 0..g.n {
        for co in 0..g.cout {
            out[(n * g.cout + co) * out_plane..][..out_plane].fill(bias.data()[co]);
        }
        for ci in 0..g.cin {
            let xi = &x[(n * g.cin + ci) * in_plane..][..in_plane];
            for co in 0..g.cout {
                let o = &mut out[(n * g.cout + co) * out_plane..][..out_plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = k[((ci * g.cout + co) * g.kh + ky) * g.kw + kx];
                        for iy in 0..g.h {
                            let orow = &mut o[(iy * g.stride + ky) * g.wout..][..g.wout];
                            let irow = &xi[iy * g.w..][..g.w];
                            for (ix, iv) in irow.iter().enumerate() {
                                orow[ix * g.stride + kx] += wv * iv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.hout, g.wout], out)
}

/// Gradients of `conv_transpose2d` w.r.t. input (only when `need_input`), kernel and bias.
pub fn conv_transpose2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    need_input: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let cout = kernel.shape().get(1).copied().unwrap_or(0);
    let g = conv_transpose2d_geometry(input, kernel, &Tensor::zeros(vec![cout]), stride)?;
    let expect = [g.n, g.cout, g.hout, g.wout];
    if grad_out.shape() != expect {
        return Err(TensorError::invalid(
            "conv_transpose2d_backward",
            format!("grad_out shape {:?}, expected {:?}", grad_out.shape(), expect),
        ));
    }
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let in_plane = g.h * g.w;
    let out_plane = g.hout * g.wout;
    let mut gx = if need_input { vec![0.0; x.len()] } else { Vec::new() };
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; g.cout];
    for n in 0..g.n {
        for co in 0..g.cout {
            gb[co] += go[(n * g.cout + co) * out_plane..][..out_plane].iter().sum::<f64>();
        }
        for ci in 0..g.cin {
            let xoff = (n * g.cin + ci) * in_plane;
            for co in 0..g.cout {
                let gop = &go[(n * g.cout + co) * out_plane..][..out_plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let kidx = ((ci * g.cout + co) * g.kh + ky) * g.kw + kx;
                        let wv = k[kidx];
                        let mut acc = 0.0;
                        for iy in 0..g.h {
                            let grow = &gop[(iy * g.stride + ky) * g.wout..][..g.wout];
                            for ix in 0..g.w {
                                let gv = grow[ix * g.stride + kx];
                                acc += x[xoff + iy * g.w + ix] * gv;
                                if need_input {
                                    gx[xoff + iy * g.w + ix] += wv * gv;
                                }
                            }
                        }
                        gk[kidx] += acc;
                    }
                }
            }
        }
    }
    let gx = if need_input {
        Some(Tensor::new(input.shape().to_vec(), gx)?)
    } else {
        None
    };
    Ok((gx, Tensor::new(kernel.shape().to_vec(), gk)?, Tensor::new(vec![g.cout], gb)?))
}
