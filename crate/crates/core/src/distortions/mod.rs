//! Image distortions applied between embedding and extraction.
//!
//! Every distortion keeps the image shape and the `[0, 1]` range; the
//! stochastic ones are deterministic functions of their seed.

mod jpeg;

pub use jpeg::{fdct, idct, jpeg, quantize_block, scaled_table, STD_CHROMINANCE, STD_LUMINANCE};

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cubic, rotate_quarter, ImageTensor, Tensor3};

/// Keeps a `floor(ratio * side)` window at a seeded offset in place and
/// zeroes everything else.
pub fn random_crop(img: &ImageTensor, ratio: f64, seed: u64) -> Result<ImageTensor> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::invalid(format!("crop ratio {ratio} outside (0,1]")));
    }
    if ratio == 1.0 {
        return Ok(img.clone());
    }
    let s = img.shape();
    let wh = (ratio * s.height as f64).floor() as usize;
    let ww = (ratio * s.width as f64).floor() as usize;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let oy = rng.random_range(0..=s.height - wh);
    let ox = rng.random_range(0..=s.width - ww);
    let t = img.tensor();
    ImageTensor::new(Tensor3::from_fn(s, |c, y, x| {
        if (oy..oy + wh).contains(&y) && (ox..ox + ww).contains(&x) {
            t.get(c, y, x)
        } else {
            0.0
        }
    }))
}

/// Normalized Gaussian taps with `sigma = radius`, truncated at `3 sigma`.
pub fn gaussian_kernel(radius: f64) -> Result<Vec<f64>> {
    if !(radius >= 1.0 && radius.is_finite()) {
        return Err(Error::invalid(format!("blur radius {radius} must be >= 1")));
    }
    let half = (3.0 * radius).ceil() as i64;
    let raw: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * radius * radius)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / sum).collect())
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &ImageTensor, radius: f64) -> Result<ImageTensor> {
    let k = gaussian_kernel(radius)?;
    let half = (k.len() / 2) as i64;
    let s = img.shape();
    let t = img.tensor();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let rows = Tensor3::from_fn(s, |c, y, x| {
        k.iter()
            .enumerate()
            .map(|(i, w)| w * t.get(c, y, clamp(x as i64 + i as i64 - half, s.width)))
            .sum()
    });
    ImageTensor::clamped(Tensor3::from_fn(s, |c, y, x| {
        k.iter()
            .enumerate()
            .map(|(i, w)| w * rows.get(c, clamp(y as i64 + i as i64 - half, s.height), x))
            .sum()
    }))
}

/// Adds iid `N(0, std^2)` noise and clamps.
pub fn gaussian_noise(img: &ImageTensor, std: f64, seed: u64) -> Result<ImageTensor> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(Error::invalid(format!("noise std {std} must be >= 0")));
    }
    if std == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    ImageTensor::clamped(img.tensor().map_mut(|v| v + normal.sample(&mut rng)))
}

/// `clamp(factor * img)`.
pub fn brightness(img: &ImageTensor, factor: f64) -> Result<ImageTensor> {
    if !(factor >= 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!(
            "brightness factor {factor} must be >= 0"
        )));
    }
    ImageTensor::clamped(img.tensor().map(|v| factor * v))
}

/// Counter-clockwise rotation about the image center. Multiples of 90
/// degrees are exact permutations (for non-square images only multiples of
/// 180); other angles resample bicubically into the same canvas, filling
/// uncovered pixels with zero.
pub fn rotate(img: &ImageTensor, degrees: f64) -> Result<ImageTensor> {
    if !degrees.is_finite() {
        return Err(Error::invalid("rotation angle must be finite"));
    }
    let s = img.shape();
    let turns = degrees / 90.0;
    if turns == turns.round() {
        let q = turns.rem_euclid(4.0) as i32;
        if q % 2 == 0 || s.height == s.width {
            return ImageTensor::new(rotate_quarter(img.tensor(), q));
        }
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((s.height as f64 - 1.0) / 2.0, (s.width as f64 - 1.0) / 2.0);
    let t = img.tensor();
    ImageTensor::clamped(Tensor3::from_fn(s, |c, y, x| {
        // output pixel -> source, rows grow downwards
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let sx = cx + cos * dx - sin * dy;
        let sy = cy + sin * dx + cos * dy;
        let (fy, fx) = (sy.floor(), sx.floor());
        let mut acc = 0.0;
        for j in -1..=2 {
            let yy = fy as i64 + j;
            if yy < 0 || yy >= s.height as i64 {
                continue;
            }
            let wy = cubic(sy - yy as f64);
            for i in -1..=2 {
                let xx = fx as i64 + i;
                if xx < 0 || xx >= s.width as i64 {
                    continue;
                }
                acc += wy * cubic(sx - xx as f64) * t.get(c, yy as usize, xx as usize);
            }
        }
        acc
    }))
}

/// One entry of a distortion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Distortion {
    Identity,
    Jpeg { quality: u8 },
    Crop { ratio: f64 },
    Blur { radius: f64 },
    Noise { std: f64 },
    Brightness { factor: f64 },
    Rotate { degrees: f64 },
}

impl Distortion {
    pub fn apply(&self, img: &ImageTensor, seed: u64) -> Result<ImageTensor> {
        match *self {
            Distortion::Identity => Ok(img.clone()),
            Distortion::Jpeg { quality } => jpeg(img, quality),
            Distortion::Crop { ratio } => random_crop(img, ratio, seed),
            Distortion::Blur { radius } => gaussian_blur(img, radius),
            Distortion::Noise { std } => gaussian_noise(img, std, seed),
            Distortion::Brightness { factor } => brightness(img, factor),
            Distortion::Rotate { degrees } => rotate(img, degrees),
        }
    }

    /// Column label, e.g. `jpeg_q50`.
    pub fn label(&self) -> String {
        match *self {
            Distortion::Identity => "identity".into(),
            Distortion::Jpeg { quality } => format!("jpeg_q{quality}"),
            Distortion::Crop { ratio } => format!("crop_masked_{ratio}"),
            Distortion::Blur { radius } => format!("blur_r{radius}"),
            Distortion::Noise { std } => format!("noise_std{std}"),
            Distortion::Brightness { factor } => format!("brightness_f{factor}"),
            Distortion::Rotate { degrees } => format!("rotate_{degrees}deg"),
        }
    }

    /// The five normal distortions at their default settings.
    pub fn normal_suite() -> Vec<Distortion> {
        vec![
            Distortion::Jpeg { quality: 50 },
            Distortion::Crop { ratio: 0.8 },
            Distortion::Blur { radius: 2.0 },
            Distortion::Noise { std: 0.05 },
            Distortion::Brightness { factor: 2.0 },
        ]
    }

    /// The distortions used with the Tree-Ring injector.
    pub fn treering_suite() -> Vec<Distortion> {
        vec![
            Distortion::Jpeg { quality: 50 },
            Distortion::Blur { radius: 5.0 },
            Distortion::Noise { std: 0.05 },
            Distortion::Brightness { factor: 0.5 },
            Distortion::Rotate { degrees: 90.0 },
        ]
    }
}

impl fmt::Display for Distortion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}
