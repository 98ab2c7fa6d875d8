use archnet_tensor::Tensor;

use crate::error::{Error, Result};

fn plane(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] if h > 0 && w > 0 => Ok((h, w)),
        [1, h, w] if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(Error::InvalidArgument(format!(
            "{what} must be a non-empty H x W image, got {:?}",
            t.shape()
        ))),
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn bilinear_resize(src: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..ow {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bot = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("correlation of a constant image".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson r between two single-channel images after resampling the larger
/// one to the size of the smaller.
pub fn pixel_correlation(original: &Tensor, encrypted_channel: &Tensor) -> Result<f64> {
    let sa = plane(original, "original")?;
    let sb = plane(encrypted_channel, "encrypted channel")?;
    if !original.is_finite() || !encrypted_channel.is_finite() {
        return Err(Error::InvalidArgument("correlation inputs must be finite".into()));
    }
    let (a, b) = if sa.0 * sa.1 <= sb.0 * sb.1 {
        (original.data().to_vec(), bilinear_resize(encrypted_channel.data(), sb, sa))
    } else {
        (bilinear_resize(original.data(), sa, sb), encrypted_channel.data().to_vec())
    };
    pearson(&a, &b)
}
