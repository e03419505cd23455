//! Log-magnitude short-time spectrograms resized to fixed-size images.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 32;

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// `|STFT|` of one signal as a `[bins, frames]` row-major matrix, `bins = window/2 + 1`.
pub fn stft_magnitude(signal: &[f64], window: usize, hop: usize) -> Result<(Vec<f64>, usize, usize)> {
    if window == 0 || hop == 0 || hop > window || window > signal.len() {
        return Err(Error::InvalidArgument(format!(
            "need len >= window >= hop > 0, got len={}, window={window}, hop={hop}",
            signal.len()
        )));
    }
    let frames = 1 + (signal.len() - window) / hop;
    let bins = window / 2 + 1;
    let win = hann(window);
    let fft = FftPlanner::new().plan_fft_forward(window);
    let mut out = vec![0.0; bins * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for f in 0..frames {
        let seg = &signal[f * hop..f * hop + window];
        for (b, (x, w)) in buf.iter_mut().zip(seg.iter().zip(&win)) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            out[k * frames + f] = buf[k].norm();
        }
    }
    Ok((out, bins, frames))
}

/// Bilinear resampling of an `h×w` grid to `out_h×out_w`, corners aligned.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = vec![0.0; out_h * out_w];
    for i in 0..out_h {
        let (r0, r1, fr) = coord(i, out_h, h);
        for j in 0..out_w {
            let (c0, c1, fc) = coord(j, out_w, w);
            let top = src[r0 * w + c0] * (1.0 - fc) + src[r0 * w + c1] * fc;
            let bot = src[r1 * w + c0] * (1.0 - fc) + src[r1 * w + c1] * fc;
            out[i * out_w + j] = top * (1.0 - fr) + bot * fr;
        }
    }
    out
}

/// Rescales to `[0, 1]`; a flat input maps to all zeros.
pub fn min_max_normalize(v: &mut [f64]) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 1e-12) {
        v.fill(0.0);
        return;
    }
    v.iter_mut().for_each(|x| *x = (*x - lo) / span);
}

/// Converts `n×L` signals into `n×1×32×32` images: `ln(1 + |STFT|)` with
/// frequency along rows (low frequencies first) and time along columns,
/// bilinearly resized, then min-max normalized per sample.
pub fn spectrogram_ingest(signals: &Tensor, window: usize, hop: usize) -> Result<Tensor> {
    if signals.ndim() != 2 {
        return Err(Error::dim("spectrogram_ingest", format!("expected n×L, got {:?}", signals.shape())));
    }
    let n = signals.rows();
    let mut data = Vec::with_capacity(n * IMAGE_SIDE * IMAGE_SIDE);
    for i in 0..n {
        let (mag, bins, frames) = stft_magnitude(signals.row(i), window, hop)?;
        let logmag: Vec<f64> = mag.iter().map(|m| m.ln_1p()).collect();
        let mut img = resize_bilinear(&logmag, bins, frames, IMAGE_SIDE, IMAGE_SIDE);
        min_max_normalize(&mut img);
        data.extend(img);
    }
    Tensor::new(&[n, 1, IMAGE_SIDE, IMAGE_SIDE], data)
}
