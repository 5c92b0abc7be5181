//! Deterministic DDIM sampling (eta = 0) and its inversion.
//!
//! For consecutive grid timesteps `t > s` one sampling step reads
//!
//! ```text
//! x0   = (z_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t)
//! z_s  = sqrt(abar_s) * x0 + sqrt(1 - abar_s) * eps,      eps = model(z_t, t, cond)
//! ```
//!
//! which is affine in `z_t` once `eps` is fixed: `z_s = r * z_t + d * eps` with
//! `r = sqrt(abar_s / abar_t)` and `d = sqrt(1 - abar_s) - r * sqrt(1 - abar_t)`.
//! Inversion walks the grid upwards. The plain estimate evaluates the model at
//! the known latent `z_s`; optional fixed-point refinement then re-evaluates it
//! at the current guess for `z_t`, converging to the exact preimage of the
//! sampling step whenever the model is a contraction at that scale.

use serde::{Deserialize, Serialize};

use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, LatentTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    ScaledLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub train_timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub kind: ScheduleKind,
    pub steps: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            train_timesteps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            kind: ScheduleKind::ScaledLinear,
            steps: 25,
        }
    }
}

/// Cumulative signal levels and the selected inference timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSchedule {
    alpha_bar: Vec<f64>,
    /// Descending.
    timesteps: Vec<usize>,
}

impl AlphaSchedule {
    /// Builds a schedule from an externally supplied `abar` table (for
    /// instance one advertised by a remote model).
    pub fn from_table(alpha_bar: Vec<f64>, steps: usize) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(Error::invalid("empty alpha_bar table"));
        }
        if alpha_bar.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::invalid("alpha_bar entries must lie in (0,1]"));
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("alpha_bar must be strictly decreasing"));
        }
        if steps == 0 || steps > alpha_bar.len() {
            return Err(Error::invalid(format!(
                "steps {steps} must be in 1..={}",
                alpha_bar.len()
            )));
        }
        let timesteps = timestep_grid(alpha_bar.len(), steps);
        Ok(Self {
            alpha_bar,
            timesteps,
        })
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    /// Consecutive `(t, t_prev)` pairs in sampling order.
    pub fn sampling_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.timesteps.windows(2).map(|w| (w[0], w[1]))
    }

    /// Coefficients `(r, d)` of the affine step `z_s = r z_t + d eps`.
    pub fn step_coefficients(&self, t: usize, s: usize) -> (f64, f64) {
        let at = self.alpha_bar[t];
        let as_ = self.alpha_bar[s];
        let r = (as_ / at).sqrt();
        let d = (1.0 - as_).sqrt() - r * (1.0 - at).sqrt();
        (r, d)
    }

    /// Composite map of a full sampling pass for a predictor
    /// `eps = scale * z + c` with `c` constant: returns `(gain, offset)` such
    /// that `z_0 = gain * z_T + offset * c`.
    pub fn affine_response(&self, scale: f64) -> (f64, f64) {
        self.sampling_pairs().fold((1.0, 0.0), |(g, o), (t, s)| {
            let (r, d) = self.step_coefficients(t, s);
            let m = r + d * scale;
            (m * g, m * o + d)
        })
    }
}

fn timestep_grid(train_timesteps: usize, steps: usize) -> Vec<usize> {
    let last = train_timesteps - 1;
    if steps == 1 {
        return vec![last];
    }
    (0..steps)
        .rev()
        .map(|k| ((k * last) as f64 / (steps - 1) as f64).round() as usize)
        .collect()
}

pub fn make_schedule(cfg: &SchedulerConfig) -> Result<AlphaSchedule> {
    let SchedulerConfig {
        train_timesteps: n,
        beta_start,
        beta_end,
        kind,
        steps,
    } = *cfg;
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta_start ({beta_start}) < beta_end ({beta_end}) < 1"
        )));
    }
    if steps == 0 || n < steps {
        return Err(Error::invalid(format!(
            "need train_timesteps ({n}) >= steps ({steps}) >= 1"
        )));
    }
    let lerp = |a: f64, b: f64, i: usize| {
        if n == 1 {
            a
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    };
    let mut alpha_bar = Vec::with_capacity(n);
    let mut acc = 1.0;
    for i in 0..n {
        let beta = match kind {
            ScheduleKind::Linear => lerp(beta_start, beta_end, i),
            ScheduleKind::ScaledLinear => lerp(beta_start.sqrt(), beta_end.sqrt(), i).powi(2),
        };
        acc *= 1.0 - beta;
        alpha_bar.push(acc);
    }
    if alpha_bar[0] < 0.99 {
        return Err(Error::invalid(format!(
            "alpha_bar[0] = {} is below 0.99",
            alpha_bar[0]
        )));
    }
    AlphaSchedule::from_table(alpha_bar, steps)
}

fn checked_predict(
    model: &dyn NoisePredictor,
    z: &LatentTensor,
    t: usize,
    cond: &ImageTensor,
) -> Result<LatentTensor> {
    let eps = model.predict(z, t, cond)?;
    if eps.shape() != z.shape() {
        return Err(Error::invalid(format!(
            "model returned {} for latent {}",
            eps.shape(),
            z.shape()
        )));
    }
    if !eps.tensor().is_finite() {
        return Err(Error::numeric(Some(t), "non-finite noise prediction"));
    }
    Ok(eps)
}

fn check_inputs(model: &dyn NoisePredictor, z: &LatentTensor, cond: &ImageTensor) -> Result<()> {
    z.tensor().expect_shape(model.latent_shape())?;
    cond.tensor().expect_shape(model.cond_shape())?;
    if !z.tensor().is_finite() {
        return Err(Error::numeric(None, "non-finite input latent"));
    }
    Ok(())
}

/// Runs the deterministic sampler from `z_T` down to `z_0`.
pub fn ddim_sample(
    model: &dyn NoisePredictor,
    z_t: &LatentTensor,
    cond: &ImageTensor,
    sched: &AlphaSchedule,
) -> Result<LatentTensor> {
    check_inputs(model, z_t, cond)?;
    let mut z = z_t.clone();
    for (t, s) in sched.sampling_pairs() {
        let eps = checked_predict(model, &z, t, cond)?;
        let (r, d) = sched.step_coefficients(t, s);
        z = z.axpby(r, &eps, d)?;
        if !z.tensor().is_finite() {
            return Err(Error::numeric(Some(t), "latent diverged"));
        }
    }
    Ok(z)
}

/// Maps `z_0` back towards the noise that generated it.
///
/// `refinement` bounds the number of fixed-point corrections per step;
/// iteration stops early once a correction moves no element by more than
/// `1e-13 * (1 + max|z|)`.
pub fn ddim_invert(
    model: &dyn NoisePredictor,
    z_0: &LatentTensor,
    cond: &ImageTensor,
    sched: &AlphaSchedule,
    refinement: usize,
) -> Result<LatentTensor> {
    check_inputs(model, z_0, cond)?;
    let pairs: Vec<_> = sched.sampling_pairs().collect();
    let mut z = z_0.clone();
    for &(t, s) in pairs.iter().rev() {
        let (r, d) = sched.step_coefficients(t, s);
        let eps = checked_predict(model, &z, s, cond)?;
        let mut next = z.axpby(1.0 / r, &eps, -d / r)?;
        for _ in 0..refinement {
            let eps = checked_predict(model, &next, t, cond)?;
            let candidate = z.axpby(1.0 / r, &eps, -d / r)?;
            let (moved, peak) = candidate
                .data()
                .iter()
                .zip(next.data())
                .fold((0.0f64, 0.0f64), |(m, p), (&v, &prev)| {
                    (m.max((v - prev).abs()), p.max(v.abs()))
                });
            next = candidate;
            if moved <= 1e-13 * (1.0 + peak) {
                break;
            }
        }
        if !next.tensor().is_finite() {
            return Err(Error::numeric(Some(t), "inverted latent diverged"));
        }
        z = next;
    }
    Ok(z)
}
