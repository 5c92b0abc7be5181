//! Fidelity and extraction metrics.

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::stats::binomial_upper_tail;
use crate::tensor::{ImageTensor, Tensor3};
use crate::treering::DetectionReport;

/// Peak signal-to-noise ratio with peak 1.0; identical images give `+inf`.
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.tensor().expect_shape(b.shape())?;
    let n = a.tensor().data().len() as f64;
    let mse = a
        .tensor()
        .data()
        .iter()
        .zip(b.tensor().data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.map(|v| v / sum)
}

/// Separable "valid" Gaussian filtering of `x`, `y`, `x^2`, `y^2` and `xy`
/// in one sweep; returns the five filtered planes interleaved per position.
fn filter_moments(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    k: &[f64; SSIM_WINDOW],
) -> Vec<[f64; 5]> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![[0.0; 5]; h * ow];
    for r in 0..h {
        let (xr, yr) = (&x[r * w..][..w], &y[r * w..][..w]);
        for c in 0..ow {
            let mut acc = [0.0; 5];
            for (i, &g) in k.iter().enumerate() {
                let (p, q) = (xr[c + i], yr[c + i]);
                acc[0] += g * p;
                acc[1] += g * q;
                acc[2] += g * p * p;
                acc[3] += g * q * q;
                acc[4] += g * p * q;
            }
            rows[r * ow + c] = acc;
        }
    }
    let mut out = vec![[0.0; 5]; oh * ow];
    for r in 0..oh {
        for (i, &g) in k.iter().enumerate() {
            let src = &rows[(r + i) * ow..][..ow];
            for (o, v) in out[r * ow..][..ow].iter_mut().zip(src) {
                for m in 0..5 {
                    o[m] += g * v[m];
                }
            }
        }
    }
    out
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), constants for a
/// unit dynamic range, averaged over valid window positions and channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.tensor().expect_shape(b.shape())?;
    let s = a.shape();
    if s.height < SSIM_WINDOW || s.width < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {s}"
        )));
    }
    let k = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..s.channels {
        let moments = filter_moments(
            a.tensor().plane(c),
            b.tensor().plane(c),
            s.height,
            s.width,
            &k,
        );
        for &[mx, my, xx, yy, xy] in &moments {
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cxy = xy - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        count += moments.len();
    }
    Ok(total / count as f64)
}

/// Fraction of positions where `a` and `b` agree.
pub fn bit_accuracy(a: &BitString, b: &BitString) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "bit strings of lengths {} and {} cannot be compared",
            a.len(),
            b.len()
        )));
    }
    let matches = a
        .bits()
        .iter()
        .zip(b.bits())
        .filter(|(x, y)| x == y)
        .count();
    Ok(matches as f64 / a.len() as f64)
}

/// Fraction of reports that flag a watermark.
pub fn detection_rate(reports: &[DetectionReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::invalid("no detection reports"));
    }
    Ok(reports.iter().filter(|r| r.detected).count() as f64 / reports.len() as f64)
}

/// Smallest match count `k` with `P[Bin(len, 1/2) >= k] <= target_fpr`, or
/// `None` if even a perfect match is more likely than that under chance.
pub fn multibit_threshold(len: usize, target_fpr: f64) -> Option<usize> {
    (0..=len).find(|&k| binomial_upper_tail(len as u64, 0.5, k as u64) <= target_fpr)
}

/// Declares a multi-bit watermark present when the number of matching bits
/// reaches [`multibit_threshold`].
pub fn multibit_detect(accuracy: f64, len: usize, target_fpr: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&accuracy) || len == 0 || !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::invalid(format!(
            "multibit_detect needs accuracy in [0,1], len > 0, fpr in (0,1); got ({accuracy}, {len}, {target_fpr})"
        )));
    }
    let matches = (accuracy * len as f64).round() as usize;
    Ok(multibit_threshold(len, target_fpr).is_some_and(|k| matches >= k))
}

/// Mean squared error of two equally shaped tensors.
pub fn mse(a: &Tensor3, b: &Tensor3) -> Result<f64> {
    a.expect_shape(b.shape())?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64)
}
