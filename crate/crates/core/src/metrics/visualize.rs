use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use archnet_tensor::Tensor;

use crate::error::{Error, Result};

/// Writes 8-bit RGB pixels (`width * height * 3` bytes) as a PNG.
pub fn write_png_rgb(path: impl AsRef<Path>, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width as usize * height as usize * 3 {
        return Err(Error::InvalidArgument(format!(
            "{} bytes do not form a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width, height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(std::io::Error::other)?;
    w.write_image_data(rgb).map_err(std::io::Error::other)?;
    w.finish().map_err(std::io::Error::other)?;
    Ok(())
}

fn normalize(plane: &[f64]) -> Vec<u8> {
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![128; plane.len()];
    }
    plane.iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
}

/// Interleaved RGB bytes from three channels of a `C x H x W` tensor, each
/// min-max normalized to [0, 255]. A constant channel maps to 128.
pub fn render_channels(sample: &Tensor, channels: [usize; 3]) -> Result<(u32, u32, Vec<u8>)> {
    let &[c, h, w] = sample.shape() else {
        return Err(Error::InvalidArgument(format!("expected a C x H x W sample, got {:?}", sample.shape())));
    };
    if let Some(&bad) = channels.iter().find(|&&i| i >= c) {
        return Err(Error::InvalidArgument(format!("channel {bad} out of range for {c} channels")));
    }
    if !sample.is_finite() {
        return Err(Error::InvalidArgument("sample contains non-finite values".into()));
    }
    let planes: Vec<Vec<u8>> = channels
        .iter()
        .map(|&i| normalize(&sample.data()[i * h * w..(i + 1) * h * w]))
        .collect();
    let mut rgb = Vec::with_capacity(h * w * 3);
    for p in 0..h * w {
        for plane in &planes {
            rgb.push(plane[p]);
        }
    }
    Ok((w as u32, h as u32, rgb))
}

pub fn visualize_channels(sample: &Tensor, channels: [usize; 3], out: impl AsRef<Path>) -> Result<()> {
    let (w, h, rgb) = render_channels(sample, channels)?;
    write_png_rgb(out, w, h, &rgb)
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [23, 190, 207],
];

/// Line chart of one or more curves against their index. No text is drawn.
pub fn plot_curves(curves: &[&[f64]], out: impl AsRef<Path>) -> Result<()> {
    const W: usize = 640;
    const H: usize = 400;
    const M: usize = 32;
    let mut img = vec![255u8; W * H * 3];
    let put = |x: usize, y: usize, c: [u8; 3], img: &mut Vec<u8>| {
        if x < W && y < H {
            img[(y * W + x) * 3..(y * W + x) * 3 + 3].copy_from_slice(&c);
        }
    };
    for x in M..W - M {
        put(x, H - M, [0, 0, 0], &mut img);
    }
    for y in M..H - M + 1 {
        put(M, y, [0, 0, 0], &mut img);
    }
    let finite = curves.iter().flat_map(|c| c.iter()).copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if lo.is_finite() {
        let span = if hi > lo { hi - lo } else { 1.0 };
        let longest = curves.iter().map(|c| c.len()).max().unwrap_or(1).max(2);
        let px = |i: usize| M + i * (W - 2 * M) / (longest - 1);
        let py = |v: f64| H - M - ((v - lo) / span * (H - 2 * M) as f64).round() as usize;
        for (k, curve) in curves.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(usize, usize)> = curve
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_finite())
                .map(|(i, &v)| (px(i), py(v)))
                .collect();
            for pair in pts.windows(2) {
                let (x0, y0) = (pair[0].0 as f64, pair[0].1 as f64);
                let (x1, y1) = (pair[1].0 as f64, pair[1].1 as f64);
                let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1.0) as usize;
                for s in 0..=steps {
                    let t = s as f64 / steps as f64;
                    put(
                        (x0 + (x1 - x0) * t).round() as usize,
                        (y0 + (y1 - y0) * t).round() as usize,
                        color,
                        &mut img,
                    );
                }
            }
            for &(x, y) in &pts {
                for dy in 0..3 {
                    for dx in 0..3 {
                        put(x + dx - 1.min(x), y + dy - 1.min(y), color, &mut img);
                    }
                }
            }
        }
    }
    write_png_rgb(out, W as u32, H as u32, &img)
}
