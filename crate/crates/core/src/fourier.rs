//! Centered, orthonormal 2-D discrete Fourier transform of a single plane.
//!
//! "Centered" means the zero-frequency bin sits at `(h/2, w/2)`; bin `(u, v)`
//! of the centered array holds frequency `(u - h/2, v - w/2)`. With the
//! `1/sqrt(h*w)` scaling the transform is unitary, so a plane of unit
//! Gaussian noise has unit-variance Fourier coefficients.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Row-major complex plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn get(&self, y: usize, x: usize) -> Complex64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: Complex64) {
        self.data[y * self.width + x] = v;
    }

    /// Centered index of the frequency opposite to `(y, x)`.
    pub fn mirror(&self, y: usize, x: usize) -> (usize, usize) {
        (mirror_index(y, self.height), mirror_index(x, self.width))
    }
}

/// For a centered axis of length `n`, the index holding the negated frequency.
fn mirror_index(i: usize, n: usize) -> usize {
    let c = n / 2;
    // frequency f = i - c, wrapped; -f wrapped back to centered
    let f = (i + n - c) % n;
    let neg = (n - f) % n;
    (neg + c) % n
}

fn transform(data: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (
            planner.plan_fft_inverse(width),
            planner.plan_fft_inverse(height),
        )
    } else {
        (
            planner.plan_fft_forward(width),
            planner.plan_fft_forward(height),
        )
    };
    for r in data.chunks_exact_mut(width) {
        row.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        col.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
    let norm = 1.0 / ((height * width) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= norm;
    }
}

/// Moves bin `(y, x)` to `((y + sy) % h, (x + sx) % w)`.
fn roll(data: &[Complex64], height: usize, width: usize, sy: usize, sx: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for y in 0..height {
        for x in 0..width {
            out[((y + sy) % height) * width + (x + sx) % width] = data[y * width + x];
        }
    }
    out
}

/// Orthonormal FFT of a real `height x width` plane, zero frequency centered.
pub fn fft2_centered(plane: &[f64], height: usize, width: usize) -> Spectrum {
    assert_eq!(plane.len(), height * width, "plane size");
    let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, height, width, false);
    Spectrum {
        height,
        width,
        data: roll(&data, height, width, height / 2, width / 2),
    }
}

/// Inverse of [`fft2_centered`]; returns the complex plane.
pub fn ifft2_centered(spec: &Spectrum) -> Vec<Complex64> {
    let (h, w) = (spec.height, spec.width);
    let mut data = roll(&spec.data, h, w, h - h / 2, w - w / 2);
    transform(&mut data, h, w, true);
    data
}
