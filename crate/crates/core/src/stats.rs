//! Distribution functions used by the watermark detectors.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Standard normal CDF, `erfc(-z / sqrt 2) / 2`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile: the statrs estimate polished by one Newton step
/// against [`normal_cdf`].
pub fn normal_ppf(p: f64) -> f64 {
    let x = Normal::standard().inverse_cdf(p);
    if !x.is_finite() {
        return x;
    }
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if density < 1e-300 {
        return x;
    }
    x - (normal_cdf(x) - p) / density
}

const NCX2_TOLERANCE: f64 = 1e-12;
const NCX2_MAX_TERMS: usize = 1_000_000;

/// CDF of the noncentral chi-square distribution with `dof` degrees of
/// freedom and noncentrality `lambda`, evaluated at `x`.
///
/// Uses the Poisson mixture of central chi-square CDFs, summed outward from
/// the Poisson mode so that large `lambda` does not underflow. Truncation
/// stops once the remaining Poisson mass on each side is below 1e-12.
pub fn noncentral_chi2_cdf(x: f64, dof: f64, lambda: f64) -> Result<f64> {
    if !(x >= 0.0) || !(dof > 0.0) || !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "noncentral chi2 needs x >= 0, dof > 0, lambda >= 0 (got {x}, {dof}, {lambda})"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let half_x = x / 2.0;
    let half_k = dof / 2.0;
    if lambda == 0.0 {
        return Ok(gamma_lr(half_k, half_x));
    }
    let m = lambda / 2.0;
    let log_weight = |j: f64| -m + j * m.ln() - ln_gamma(j + 1.0);
    let mode = m.floor();

    let mut total = 0.0;
    let mut mass = 0.0;
    let mut terms = 0usize;

    // upward from the mode
    let mut j = mode;
    loop {
        let w = log_weight(j).exp();
        total += w * gamma_lr(half_k + j, half_x);
        mass += w;
        terms += 1;
        // tail beyond j is bounded by a geometric series with ratio m / (j + 2)
        let ratio = m / (j + 2.0);
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < NCX2_TOLERANCE {
            break;
        }
        if terms > NCX2_MAX_TERMS {
            return Err(Error::numeric(
                None,
                "noncentral chi2 series did not converge",
            ));
        }
        j += 1.0;
    }
    // downward from the mode
    let mut j = mode - 1.0;
    while j >= 0.0 {
        let w = log_weight(j).exp();
        total += w * gamma_lr(half_k + j, half_x);
        mass += w;
        terms += 1;
        // the remaining lower terms shrink at least as fast as j / m
        let ratio = j / m;
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < NCX2_TOLERANCE {
            break;
        }
        if terms > NCX2_MAX_TERMS {
            return Err(Error::numeric(
                None,
                "noncentral chi2 series did not converge",
            ));
        }
        j -= 1.0;
    }
    if !(mass > 1.0 - 1e-9) || !total.is_finite() {
        return Err(Error::numeric(
            None,
            format!("noncentral chi2 Poisson weights sum to {mass}"),
        ));
    }
    Ok(total.clamp(0.0, 1.0))
}

/// `P[Bin(n, p) >= k]`, summed exactly in log space.
pub fn binomial_upper_tail(n: u64, p: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    (k..=n)
        .map(|i| (ln_binomial(n, i) + i as f64 * lp + (n - i) as f64 * lq).exp())
        .sum::<f64>()
        .min(1.0)
}
