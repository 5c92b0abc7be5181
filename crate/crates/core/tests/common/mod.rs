//! Independent reference implementations shared by the oracle suites and
//! the acceptance runner.
#![allow(dead_code)]

use inversemark::tensor::ImageTensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

/// Single-scale SSIM evaluated window by window with a 2-D Gaussian, no separability.
pub fn ssim_reference(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let s = a.shape();
    let mut w = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    let mut count = 0usize;
    for c in 0..s.channels {
        for y0 in 0..=s.height - 11 {
            for x0 in 0..=s.width - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let g = w[i][j] / total;
                        let (va, vb) = (
                            a.tensor().get(c, y0 + i, x0 + j),
                            b.tensor().get(c, y0 + i, x0 + j),
                        );
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    acc / count as f64
}

/// `F(u,v) = C(u) C(v) / 4 * sum f(x,y) cos((2x+1)u pi/16) cos((2y+1)v pi/16)`,
/// divided by the table entry and rounded half away from zero.
pub fn textbook_quantize(block: &[u8; 64], table: &[u16; 64]) -> [i32; 64] {
    let c = |k: usize| {
        if k == 0 {
            std::f64::consts::FRAC_1_SQRT_2
        } else {
            1.0
        }
    };
    let pi = std::f64::consts::PI;
    std::array::from_fn(|idx| {
        let (v, u) = (idx / 8, idx % 8);
        let mut sum = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                sum += (f64::from(block[y * 8 + x]) - 128.0)
                    * (((2 * x + 1) * u) as f64 * pi / 16.0).cos()
                    * (((2 * y + 1) * v) as f64 * pi / 16.0).cos();
            }
        }
        let x = 0.25 * c(u) * c(v) * sum / f64::from(table[idx]);
        // exact ties round away from zero
        let snapped = (x * 1e6).round() / 1e6;
        if snapped.fract().abs() == 0.5 {
            (snapped + 0.5 * snapped.signum()).trunc() as i32
        } else {
            x.round() as i32
        }
    })
}

/// `P[chi2(k, lambda) <= x]` from `(Z + sqrt(lambda))^2 + chi2(k - 1)`, with its standard error.
pub fn ncx2_monte_carlo(k: usize, lambda: f64, x: f64, samples: usize, seed: u64) -> (f64, f64) {
    let chunks = 64;
    let per = samples / chunks;
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + c as u64);
            let rest = (k > 1).then(|| ChiSquared::new((k - 1) as f64).unwrap());
            (0..per)
                .filter(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let tail = rest.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                    (z + lambda.sqrt()).powi(2) + tail <= x
                })
                .count()
        })
        .sum();
    let n = (per * chunks) as f64;
    let p = hits as f64 / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// Binomial upper tail `P[Bin(n, p) >= k]` via the pmf ratio recurrence in log space.
pub fn binomial_tail_oracle(n: u64, p: f64, k: u64) -> f64 {
    let ratio = (p / (1.0 - p)).ln();
    let mut log_pmf = n as f64 * (1.0 - p).ln();
    let mut tail = 0.0;
    for i in 0..=n {
        if i >= k {
            tail += log_pmf.exp();
        }
        log_pmf += ((n - i) as f64).ln() - ((i + 1) as f64).ln() + ratio;
    }
    tail
}

/// Asymptotic Kolmogorov distribution tail `P[sqrt(n) D > t]` with the
/// Stephens small-sample correction.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let t = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for k in 1..200 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}
