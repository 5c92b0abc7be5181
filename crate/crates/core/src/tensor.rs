//! Channel-major 3-D arrays and the three roles they play in the pipeline:
//! clamped images, signed residuals and diffusion latents.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest image side accepted by [`ImageTensor`].
pub const MIN_IMAGE_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub const fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Unconstrained real array in (channel, row, column) order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "buffer of {} values does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(c, y, x)]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.shape.plane();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped tensors.
    /// Like [`Self::map`] but visits elements in storage order with a stateful closure.
    pub fn map_mut(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_shape(other.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_shape(&self, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(Error::invalid(format!(
                "shape mismatch: expected {shape}, got {}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Separable bicubic resampling (Keys, a = -0.5). When shrinking, the
    /// kernel is stretched by the scale factor so that it also low-passes.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "resize target {height}x{width} must be positive"
            )));
        }
        let Shape {
            channels,
            height: h0,
            width: w0,
        } = self.shape;
        if (h0, w0) == (height, width) {
            return Ok(self.clone());
        }

        let mut current = self.clone();
        if w0 != width {
            let taps = resample_taps(w0, width);
            let shape = Shape::new(channels, h0, width);
            let mut data = vec![0.0; shape.len()];
            for c in 0..channels {
                for y in 0..h0 {
                    let row = &current.data[current.shape.index(c, y, 0)..][..w0];
                    let out = &mut data[shape.index(c, y, 0)..][..width];
                    for (o, tap) in out.iter_mut().zip(&taps) {
                        *o = tap.apply(|i| row[i]);
                    }
                }
            }
            current = Tensor3 { shape, data };
        }
        if h0 != height {
            let taps = resample_taps(h0, height);
            let shape = Shape::new(channels, height, width);
            let mut data = vec![0.0; shape.len()];
            for c in 0..channels {
                for (y, tap) in taps.iter().enumerate() {
                    let out = &mut data[shape.index(c, y, 0)..][..width];
                    for (x, o) in out.iter_mut().enumerate() {
                        *o = tap.apply(|i| current.data[current.shape.index(c, i, x)]);
                    }
                }
            }
            current = Tensor3 { shape, data };
        }
        Ok(current)
    }
}

struct Tap {
    start: usize,
    weights: Vec<f64>,
}

impl Tap {
    #[inline]
    fn apply(&self, sample: impl Fn(usize) -> f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| w * sample(self.start + k))
            .sum()
    }
}

pub(crate) fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

fn resample_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..output)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(input);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|j| cubic((j as f64 + 0.5 - center) / stretch))
                .collect();
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            Tap { start: lo, weights }
        })
        .collect()
}

/// Pixel image with every sample in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Tensor3);

impl ImageTensor {
    /// Validates channel count, minimum side and value range.
    pub fn new(tensor: Tensor3) -> Result<Self> {
        Self::check_geometry(tensor.shape)?;
        if let Some(v) = tensor.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self(tensor))
    }

    /// Clamps every sample into `[0, 1]`; non-finite input is a numeric failure.
    pub fn clamped(tensor: Tensor3) -> Result<Self> {
        Self::check_geometry(tensor.shape)?;
        if !tensor.is_finite() {
            return Err(Error::numeric(None, "non-finite pixel values"));
        }
        Ok(Self(tensor.map(|v| v.clamp(0.0, 1.0))))
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        Self::new(Tensor3::filled(shape, value))
    }

    fn check_geometry(shape: Shape) -> Result<()> {
        if shape.channels != 1 && shape.channels != 3 {
            return Err(Error::invalid(format!(
                "images need 1 or 3 channels, got {}",
                shape.channels
            )));
        }
        if shape.height < MIN_IMAGE_SIDE || shape.width < MIN_IMAGE_SIDE {
            return Err(Error::invalid(format!(
                "image sides must be at least {MIN_IMAGE_SIDE}, got {}x{}",
                shape.height, shape.width
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }

    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::invalid(format!(
                "resize target {height}x{width} below minimum side {MIN_IMAGE_SIDE}"
            )));
        }
        if (height, width) == (self.0.shape.height, self.0.shape.width) {
            return Ok(self.clone());
        }
        Self::clamped(self.0.resize(height, width)?)
    }

    /// Channel-mean grey level, one plane.
    pub fn grey(&self) -> Tensor3 {
        let s = self.0.shape;
        Tensor3::from_fn(Shape::new(1, s.height, s.width), |_, y, x| {
            (0..s.channels).map(|c| self.0.get(c, y, x)).sum::<f64>() / s.channels as f64
        })
    }
}

/// Signed difference image; never clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTensor(Tensor3);

impl ResidualTensor {
    /// `minuend - subtrahend`, which must share a shape.
    pub fn difference(minuend: &Tensor3, subtrahend: &ImageTensor) -> Result<Self> {
        minuend.zip_map(subtrahend.tensor(), |a, b| a - b).map(Self)
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }
}

/// Diffusion latent `Z` at any timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor(Tensor3);

impl LatentTensor {
    pub fn new(tensor: Tensor3) -> Result<Self> {
        if tensor.shape.is_empty() {
            return Err(Error::invalid("latent shape must be non-empty"));
        }
        Ok(Self(tensor))
    }

    pub fn zeros(shape: Shape) -> Self {
        Self(Tensor3::zeros(shape))
    }

    pub fn from_fn(shape: Shape, f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        Self(Tensor3::from_fn(shape, f))
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor3::new(shape, data)?)
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.map(f))
    }

    /// `alpha * self + beta * other`.
    pub fn axpby(&self, alpha: f64, other: &LatentTensor, beta: f64) -> Result<Self> {
        self.0
            .zip_map(&other.0, |a, b| alpha * a + beta * b)
            .map(Self)
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> f64 {
        self.0.max_abs_diff(&other.0)
    }

    /// Rotates every channel by `quarter_turns` x 90 degrees counter-clockwise.
    pub fn rot90(&self, quarter_turns: i32) -> Self {
        Self(rotate_quarter(&self.0, quarter_turns))
    }

    /// Rotates by `quarter_turns` x 90 degrees counter-clockwise about sample
    /// `(0, 0)` of the periodically extended grid. Unlike [`Self::rot90`],
    /// which turns about the grid's geometric center, this permutes Fourier
    /// coefficients without adding a phase.
    pub fn rot90_about_origin(&self, quarter_turns: i32) -> Self {
        let mut t = self.0.clone();
        for _ in 0..quarter_turns.rem_euclid(4) {
            let s = t.shape;
            t = Tensor3::from_fn(Shape::new(s.channels, s.width, s.height), |c, y, x| {
                t.get(c, x, (s.width - y) % s.width)
            });
        }
        Self(t)
    }
}

/// Exact pixel permutation for multiples of 90 degrees (counter-clockwise).
pub(crate) fn rotate_quarter(t: &Tensor3, quarter_turns: i32) -> Tensor3 {
    let s = t.shape;
    match quarter_turns.rem_euclid(4) {
        0 => t.clone(),
        1 => Tensor3::from_fn(Shape::new(s.channels, s.width, s.height), |c, y, x| {
            t.get(c, x, s.width - 1 - y)
        }),
        2 => Tensor3::from_fn(s, |c, y, x| t.get(c, s.height - 1 - y, s.width - 1 - x)),
        _ => Tensor3::from_fn(Shape::new(s.channels, s.width, s.height), |c, y, x| {
            t.get(c, s.height - 1 - x, y)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: Shape) -> Tensor3 {
        Tensor3::from_fn(shape, |c, y, x| ((c * 7 + y * 3 + x) % 17) as f64 / 16.0)
    }

    #[test]
    fn resize_to_s_low() {
        let img = ImageTensor::new(ramp(Shape::new(3, 512, 512))).unwrap();
        let low = img.resize(128, 128).unwrap();
        assert_eq!(low.shape(), Shape::new(3, 128, 128));
        assert!(low.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn resize_identity_is_bitwise() {
        let img = ImageTensor::new(ramp(Shape::new(3, 40, 24))).unwrap();
        let same = img.resize(40, 24).unwrap();
        assert_eq!(img, same);
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = ImageTensor::filled(Shape::new(3, 512, 512), 0.37).unwrap();
        let once = img.resize(128, 128).unwrap();
        let trip = img
            .resize(128, 128)
            .and_then(|i| i.resize(512, 512))
            .and_then(|i| i.resize(128, 128))
            .unwrap();
        assert!(once.tensor().max_abs_diff(trip.tensor()) <= 1e-6);
        assert!(once
            .tensor()
            .data()
            .iter()
            .all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn resize_rejects_bad_targets() {
        let img = ImageTensor::filled(Shape::new(1, 16, 16), 0.5).unwrap();
        assert!(matches!(img.resize(0, 16), Err(Error::InvalidArgument(_))));
        assert!(matches!(img.resize(4, 16), Err(Error::InvalidArgument(_))));
        assert!(Tensor3::zeros(Shape::new(1, 4, 4)).resize(0, 2).is_err());
    }

    #[test]
    fn resize_is_deterministic() {
        let t = ramp(Shape::new(3, 33, 47));
        assert_eq!(t.resize(20, 64).unwrap(), t.resize(20, 64).unwrap());
    }

    #[test]
    fn cubic_kernel_partition_of_unity() {
        for k in 0..10 {
            let f = k as f64 / 10.0;
            let s: f64 = (-2..=2).map(|j| cubic(j as f64 - f)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn image_validation() {
        assert!(ImageTensor::new(Tensor3::filled(Shape::new(2, 8, 8), 0.1)).is_err());
        assert!(ImageTensor::new(Tensor3::filled(Shape::new(3, 7, 8), 0.1)).is_err());
        assert!(ImageTensor::new(Tensor3::filled(Shape::new(3, 8, 8), 1.5)).is_err());
        let c = ImageTensor::clamped(Tensor3::filled(Shape::new(3, 8, 8), 1.5)).unwrap();
        assert!(c.tensor().data().iter().all(|&v| v == 1.0));
        assert!(matches!(
            ImageTensor::clamped(Tensor3::filled(Shape::new(3, 8, 8), f64::NAN)),
            Err(Error::NumericFailure { .. })
        ));
    }

    #[test]
    fn rotation_group() {
        let t = ramp(Shape::new(2, 5, 7));
        assert_eq!(rotate_quarter(&t, 4), t);
        let four = (0..4).fold(t.clone(), |acc, _| rotate_quarter(&acc, 1));
        assert_eq!(four, t);
        assert_eq!(rotate_quarter(&rotate_quarter(&t, 1), -1), t);
        let r = rotate_quarter(&t, 1);
        assert_eq!(r.shape(), Shape::new(2, 7, 5));
        // top-right corner moves to top-left under a counter-clockwise turn
        assert_eq!(r.get(0, 0, 0), t.get(0, 0, 6));
    }
}
