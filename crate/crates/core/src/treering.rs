//! Tree-Ring: a ring-constant pattern written into the centered spectrum of
//! latent channel 0, detected with a noncentral chi-square test.
//!
//! Mask coordinates come in Hermitian pairs that share a ring, so a pattern
//! that is constant on each ring must be real for the injected latent to stay
//! real. Key values are therefore the real parts of the spectrum of a seeded
//! unit-Gaussian plane along one ray from the center.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::{fft2_centered, ifft2_centered, Spectrum};
use crate::keys::TreeRingKey;
use crate::stats::noncentral_chi2_cdf;
use crate::tensor::{LatentTensor, Shape, Tensor3};

/// Outcome of a Tree-Ring test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionReport {
    pub mu: f64,
    pub sigma2: f64,
    pub lambda: f64,
    pub dof: usize,
    pub p_value: f64,
    pub threshold: f64,
    pub detected: bool,
}

/// Draws a key for a `height x width` latent grid.
pub fn tr_make_key(
    radius: usize,
    seed: u64,
    threshold: f64,
    height: usize,
    width: usize,
) -> Result<TreeRingKey> {
    if radius == 0 || 2 * radius > height.min(width) {
        return Err(Error::invalid(format!(
            "radius {radius} does not fit a {height}x{width} grid"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..height * width)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let spec = fft2_centered(&noise, height, width);
    let (cy, cx) = (height / 2, width / 2);
    let values = (0..radius)
        .map(|r| Complex64::new(spec.get(cy, cx + r).re, 0.0))
        .collect();
    TreeRingKey::new(radius, seed, threshold, height, width, values)
}

fn channel_spectrum(z: &LatentTensor, key: &TreeRingKey) -> Result<Spectrum> {
    key.check_latent(z.shape())?;
    let s = z.shape();
    Ok(fft2_centered(
        z.tensor().plane(key.channel()),
        s.height,
        s.width,
    ))
}

/// Overwrites the masked coefficients of channel 0 with the key pattern.
pub fn tr_inject(z: &LatentTensor, key: &TreeRingKey) -> Result<LatentTensor> {
    let mut spec = channel_spectrum(z, key)?;
    for &(y, x, ring) in key.mask() {
        spec.set(y, x, key.value_for_ring(ring));
    }
    // keep the spectrum Hermitian so the inverse is real
    for &(y, x, ring) in key.mask() {
        let (my, mx) = spec.mirror(y, x);
        spec.set(my, mx, key.value_for_ring(ring).conj());
    }
    let plane = ifft2_centered(&spec);
    let s: Shape = z.shape();
    let ch = key.channel();
    let src = z.tensor();
    LatentTensor::new(Tensor3::from_fn(s, |c, y, x| {
        if c == ch {
            plane[y * s.width + x].re
        } else {
            src.get(c, y, x)
        }
    }))
}

/// Masked Fourier coefficients of channel 0, in mask order.
pub fn tr_masked_values(z: &LatentTensor, key: &TreeRingKey) -> Result<Vec<Complex64>> {
    let spec = channel_spectrum(z, key)?;
    Ok(key.mask().iter().map(|&(y, x, _)| spec.get(y, x)).collect())
}

/// `(mu, sigma2)` from key values `k` and observed values `y` at the same coordinates.
pub fn tr_score_values(k: &[Complex64], y: &[Complex64]) -> Result<(f64, f64)> {
    if k.len() != y.len() || k.is_empty() {
        return Err(Error::invalid("key and observed values must pair up"));
    }
    let sigma2 = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len() as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::DegenerateInput(
            "masked Fourier values are all zero".into(),
        ));
    }
    let mu = k
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        / sigma2;
    Ok((mu, sigma2))
}

fn key_values(key: &TreeRingKey) -> Vec<Complex64> {
    key.mask()
        .iter()
        .map(|&(_, _, ring)| key.value_for_ring(ring))
        .collect()
}

pub fn tr_score(z_inv: &LatentTensor, key: &TreeRingKey) -> Result<(f64, f64)> {
    tr_score_values(&key_values(key), &tr_masked_values(z_inv, key)?)
}

/// `P[chi2(dof, lambda) <= mu]`.
pub fn tr_pvalue(mu: f64, dof: usize, lambda: f64) -> Result<f64> {
    if dof == 0 {
        return Err(Error::invalid(
            "chi-square needs at least one degree of freedom",
        ));
    }
    noncentral_chi2_cdf(mu, dof as f64, lambda)
}

pub fn tr_detect(z_inv: &LatentTensor, key: &TreeRingKey) -> Result<DetectionReport> {
    let k = key_values(key);
    let y = tr_masked_values(z_inv, key)?;
    let (mu, sigma2) = tr_score_values(&k, &y)?;
    let lambda = k.iter().map(|v| v.norm_sqr()).sum::<f64>() / sigma2;
    let dof = k.len();
    let p_value = tr_pvalue(mu, dof, lambda)?;
    Ok(DetectionReport {
        mu,
        sigma2,
        lambda,
        dof,
        p_value,
        threshold: key.threshold(),
        detected: p_value < key.threshold(),
    })
}
