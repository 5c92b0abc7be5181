//! Latent autoencoder boundary.

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, LatentTensor, Shape, Tensor3};

/// Encoder/decoder pair between pixel images and latents.
///
/// Latent sides are image sides divided by [`LatentCodec::f_vae`]; the
/// super-resolution factor of a model built on the codec equals `f_vae`.
pub trait LatentCodec: Send + Sync {
    fn f_vae(&self) -> usize;

    fn c_latent(&self) -> usize;

    fn c_pixel(&self) -> usize;

    /// Whether concurrent calls may run in parallel.
    fn share_safe(&self) -> bool {
        true
    }

    fn encode(&self, img: &ImageTensor) -> Result<LatentTensor>;

    /// Returns unclamped pixel values.
    fn decode(&self, z: &LatentTensor) -> Result<Tensor3>;

    fn latent_shape_for(&self, height: usize, width: usize) -> Result<Shape> {
        let f = self.f_vae();
        if !height.is_multiple_of(f) || !width.is_multiple_of(f) {
            return Err(Error::invalid(format!(
                "image {height}x{width} not divisible by f_vae = {f}"
            )));
        }
        Ok(Shape::new(self.c_latent(), height / f, width / f))
    }
}

const PATCH: usize = 4;
const PIXEL_CHANNELS: usize = 3;
const BASES: usize = 4;
const PATCH_LEN: usize = PIXEL_CHANNELS * PATCH * PATCH;

/// Linear codec with an exact left inverse.
///
/// Each latent channel drives one 4x4x3 pixel pattern. The four patterns are
/// an orthonormal set obtained by mixing the flat, horizontal-ramp,
/// vertical-ramp and checkerboard patches with a 4x4 Hadamard matrix, so a
/// latent whose channels are all equal decodes to a flat tile. Decoding
/// multiplies by `gain`; encoding correlates with the patterns and divides by
/// `gain`, which is the Moore-Penrose pseudo-inverse.
#[derive(Debug, Clone)]
pub struct AnalyticCodec {
    gain: f64,
    /// `bases[k][(c * 4 + i) * 4 + j]`
    bases: [[f64; PATCH_LEN]; BASES],
}

impl AnalyticCodec {
    pub fn new(gain: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::invalid(format!(
                "codec gain must be positive, got {gain}"
            )));
        }
        Ok(Self {
            gain,
            bases: mixed_bases(),
        })
    }

    /// Unit gain: decode is an isometry.
    pub fn orthonormal() -> Self {
        Self {
            gain: 1.0,
            bases: mixed_bases(),
        }
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// The 4x4x3 pattern driven by latent channel `k`, as `[c][row][col]`.
    pub fn basis(&self, k: usize) -> [[[f64; PATCH]; PATCH]; PIXEL_CHANNELS] {
        let mut out = [[[0.0; PATCH]; PATCH]; PIXEL_CHANNELS];
        for (c, plane) in out.iter_mut().enumerate() {
            for (i, row) in plane.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = self.bases[k][(c * PATCH + i) * PATCH + j];
                }
            }
        }
        out
    }

    /// Pseudo-inverse of [`LatentCodec::decode`] on arbitrary (unclamped) pixels.
    pub fn project(&self, t: &Tensor3) -> Result<LatentTensor> {
        let s = t.shape();
        if s.channels != PIXEL_CHANNELS {
            return Err(Error::invalid(format!(
                "analytic codec encodes RGB images, got {} channels",
                s.channels
            )));
        }
        let shape = self.latent_shape_for(s.height, s.width)?;
        let inv = 1.0 / self.gain;
        Ok(LatentTensor::from_fn(shape, |k, y, x| {
            let b = &self.bases[k];
            let mut acc = 0.0;
            for c in 0..PIXEL_CHANNELS {
                for i in 0..PATCH {
                    for j in 0..PATCH {
                        acc +=
                            b[(c * PATCH + i) * PATCH + j] * t.get(c, y * PATCH + i, x * PATCH + j);
                    }
                }
            }
            acc * inv
        }))
    }

    /// Pixel value produced everywhere by a latent of all ones.
    pub fn flat_response(&self) -> f64 {
        self.gain * self.bases.iter().map(|b| b[0]).sum::<f64>()
    }
}

fn mixed_bases() -> [[f64; PATCH_LEN]; BASES] {
    let flat = 1.0 / (PATCH_LEN as f64).sqrt();
    // per column offset (j - 1.5), 12 samples each: sum of squares = 60
    let ramp = 1.0 / 60f64.sqrt();
    let primitive = |k: usize, i: usize, j: usize| -> f64 {
        match k {
            0 => flat,
            1 => (j as f64 - 1.5) * ramp,
            2 => (i as f64 - 1.5) * ramp,
            _ => {
                if (i + j).is_multiple_of(2) {
                    flat
                } else {
                    -flat
                }
            }
        }
    };
    const HADAMARD: [[f64; 4]; 4] = [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ];
    let mut bases = [[0.0; PATCH_LEN]; BASES];
    for (k, basis) in bases.iter_mut().enumerate() {
        for c in 0..PIXEL_CHANNELS {
            for i in 0..PATCH {
                for j in 0..PATCH {
                    basis[(c * PATCH + i) * PATCH + j] = 0.5
                        * (0..BASES)
                            .map(|p| HADAMARD[k][p] * primitive(p, i, j))
                            .sum::<f64>();
                }
            }
        }
    }
    bases
}

impl LatentCodec for AnalyticCodec {
    fn f_vae(&self) -> usize {
        PATCH
    }

    fn c_latent(&self) -> usize {
        BASES
    }

    fn c_pixel(&self) -> usize {
        PIXEL_CHANNELS
    }

    fn encode(&self, img: &ImageTensor) -> Result<LatentTensor> {
        self.project(img.tensor())
    }

    fn decode(&self, z: &LatentTensor) -> Result<Tensor3> {
        let s = z.shape();
        if s.channels != BASES {
            return Err(Error::invalid(format!(
                "analytic codec decodes {BASES}-channel latents, got {}",
                s.channels
            )));
        }
        let t = z.tensor();
        let out = Shape::new(PIXEL_CHANNELS, s.height * PATCH, s.width * PATCH);
        Ok(Tensor3::from_fn(out, |c, py, px| {
            let (y, i) = (py / PATCH, py % PATCH);
            let (x, j) = (px / PATCH, px % PATCH);
            let idx = (c * PATCH + i) * PATCH + j;
            self.gain
                * (0..BASES)
                    .map(|k| self.bases[k][idx] * t.get(k, y, x))
                    .sum::<f64>()
        }))
    }
}
