//! Embedding through super-resolution and extraction through DDIM inversion.
//!
//! Embedding shrinks the cover to `s_low`, samples a super-resolved image
//! from watermarked initial noise conditioned on the shrunken cover, and
//! blends the resulting residual into the cover with strength `f_s`.
//! Extraction upsamples the received image into the codec's input size,
//! encodes it, and inverts the sampler with the shrunken received image as
//! conditioning.

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bits::BitString;
use crate::codec::LatentCodec;
use crate::config::{PipelineConfig, ToyParams};
use crate::denoiser::{LinearToyPredictor, NoisePredictor, ZeroToyPredictor};
use crate::error::{Error, Result};
use crate::gshade::{gs_extract, gs_watermark_noise};
use crate::keys::{TreeRingKey, WatermarkKey};
use crate::metrics::{bit_accuracy, psnr, ssim};
use crate::scheduler::{ddim_invert, ddim_sample, AlphaSchedule};
use crate::tensor::{ImageTensor, LatentTensor, ResidualTensor, Shape, Tensor3};
use crate::treering::{tr_detect, tr_inject, DetectionReport};

/// Which watermark goes into the initial noise.
#[derive(Debug, Clone, PartialEq)]
pub enum Injector {
    GaussianShading(WatermarkKey),
    TreeRing(TreeRingKey),
}

impl Injector {
    pub fn name(&self) -> &'static str {
        match self {
            Injector::GaussianShading(_) => "gshade",
            Injector::TreeRing(_) => "treering",
        }
    }

    pub fn check_latent(&self, shape: Shape) -> Result<()> {
        match self {
            Injector::GaussianShading(k) => k.check_latent(shape),
            Injector::TreeRing(k) => k.check_latent(shape),
        }
    }

    /// Initial noise `Z_T` carrying the watermark.
    pub fn watermark_noise(&self, shape: Shape, seed: u64) -> Result<LatentTensor> {
        match self {
            Injector::GaussianShading(k) => gs_watermark_noise(k, shape, seed),
            Injector::TreeRing(k) => tr_inject(&gaussian_latent(shape, seed), k),
        }
    }
}

/// Unit Gaussian latent from a seeded generator.
pub fn gaussian_latent(shape: Shape, seed: u64) -> LatentTensor {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    LatentTensor::from_fn(shape, |_, _, _| StandardNormal.sample(&mut rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fidelity {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct EmbedResult {
    /// `I_wm = clamp(I_ori + f_s * I_res)`.
    pub watermarked: ImageTensor,
    /// `I_res = I_sr(resized) - I_ori`, unclamped.
    pub residual: ResidualTensor,
    /// Decoded super-resolution output, clamped for display.
    pub super_resolved: ImageTensor,
    pub initial_latent: LatentTensor,
    pub fidelity: Fidelity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Extraction {
    Bits {
        bits: BitString,
        /// Agreement with the key's payload.
        accuracy: f64,
    },
    Detection(DetectionReport),
}

#[derive(Debug, Clone)]
pub struct ExtractResult {
    pub outcome: Extraction,
    pub inverted_latent: LatentTensor,
}

impl ExtractResult {
    /// Bit accuracy for Gaussian Shading, 1/0 detection for Tree-Ring.
    pub fn score(&self) -> f64 {
        match &self.outcome {
            Extraction::Bits { accuracy, .. } => *accuracy,
            Extraction::Detection(r) => f64::from(u8::from(r.detected)),
        }
    }
}

/// A configured embed/extract pair around one model and one codec.
pub struct Pipeline<'a> {
    cfg: PipelineConfig,
    model: &'a dyn NoisePredictor,
    codec: &'a dyn LatentCodec,
    sampling: AlphaSchedule,
    inversion: AlphaSchedule,
    latent: Shape,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        cfg: &PipelineConfig,
        model: &'a dyn NoisePredictor,
        codec: &'a dyn LatentCodec,
    ) -> Result<Self> {
        cfg.validate()?;
        let sampling = cfg.sampling_schedule()?;
        let inversion = cfg.inversion_schedule()?;
        Self::with_schedules(cfg, model, codec, sampling, inversion)
    }

    /// Uses explicit schedules, e.g. built from a remote model's `abar` table.
    pub fn with_schedules(
        cfg: &PipelineConfig,
        model: &'a dyn NoisePredictor,
        codec: &'a dyn LatentCodec,
        sampling: AlphaSchedule,
        inversion: AlphaSchedule,
    ) -> Result<Self> {
        cfg.validate()?;
        let high = codec.f_vae() * cfg.s_low;
        let latent = codec.latent_shape_for(high, high)?;
        if model.latent_shape() != latent {
            return Err(Error::invalid(format!(
                "model expects latents {}, codec produces {latent}",
                model.latent_shape()
            )));
        }
        let cond = Shape::new(codec.c_pixel(), cfg.s_low, cfg.s_low);
        if model.cond_shape() != cond {
            return Err(Error::invalid(format!(
                "model expects conditioning {}, pipeline provides {cond}",
                model.cond_shape()
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            model,
            codec,
            sampling,
            inversion,
            latent,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn latent_shape(&self) -> Shape {
        self.latent
    }

    /// Whether several images may be processed concurrently.
    pub fn share_safe(&self) -> bool {
        self.model.share_safe() && self.codec.share_safe()
    }

    fn check_image(&self, img: &ImageTensor) -> Result<()> {
        let want = Shape::new(
            self.codec.c_pixel(),
            self.cfg.resolution,
            self.cfg.resolution,
        );
        if img.shape() != want {
            return Err(Error::invalid(format!(
                "image {} does not match the configured {want}",
                img.shape()
            )));
        }
        Ok(())
    }

    /// Watermarks `cover`; `seed` drives the initial noise.
    pub fn embed(
        &self,
        cover: &ImageTensor,
        injector: &Injector,
        seed: u64,
    ) -> Result<EmbedResult> {
        self.check_image(cover)?;
        injector.check_latent(self.latent)?;
        let s_low = self.cfg.s_low;
        let low = cover.resize(s_low, s_low)?;
        let z_t = injector.watermark_noise(self.latent, seed)?;
        let z_0 = ddim_sample(self.model, &z_t, &low, &self.sampling)?;
        let sr = self.codec.decode(&z_0)?;
        let high = self.codec.f_vae() * s_low;
        debug_assert_eq!(sr.shape(), Shape::new(self.codec.c_pixel(), high, high));
        if !sr.is_finite() {
            return Err(Error::numeric(None, "decoded image is not finite"));
        }
        let res = self.cfg.resolution;
        let sr_down = sr.resize(res, res)?;
        let residual = ResidualTensor::difference(&sr_down, cover)?;
        let f_s = self.cfg.strength;
        let watermarked = ImageTensor::clamped(
            cover
                .tensor()
                .zip_map(residual.tensor(), |c, r| c + f_s * r)?,
        )?;
        let fidelity = Fidelity {
            psnr: psnr(&watermarked, cover)?,
            ssim: ssim(&watermarked, cover)?,
        };
        debug!(
            "embedded {} watermark: psnr {:.2} dB, ssim {:.4}",
            injector.name(),
            fidelity.psnr,
            fidelity.ssim
        );
        Ok(EmbedResult {
            watermarked,
            residual,
            super_resolved: ImageTensor::clamped(sr)?,
            initial_latent: z_t,
            fidelity,
        })
    }

    /// Inverts a received image back to its initial noise and reads the watermark.
    pub fn extract(&self, received: &ImageTensor, injector: &Injector) -> Result<ExtractResult> {
        self.check_image(received)?;
        injector.check_latent(self.latent)?;
        let s_low = self.cfg.s_low;
        let high = self.codec.f_vae() * s_low;
        let up = received.resize(high, high)?;
        let z_0 = self.codec.encode(&up)?;
        debug_assert_eq!(z_0.shape(), self.latent);
        let low = received.resize(s_low, s_low)?;
        let z_t = ddim_invert(
            self.model,
            &z_0,
            &low,
            &self.inversion,
            self.cfg.inversion_refinement,
        )?;
        let outcome = match injector {
            Injector::GaussianShading(key) => {
                let bits = gs_extract(&z_t, key)?;
                let accuracy = bit_accuracy(&bits, &key.payload)?;
                Extraction::Bits { bits, accuracy }
            }
            Injector::TreeRing(key) => Extraction::Detection(tr_detect(&z_t, key)?),
        };
        Ok(ExtractResult {
            outcome,
            inverted_latent: z_t,
        })
    }
}

/// Built-in noise predictors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    Zero,
    Linear,
}

/// Builds a toy predictor whose shapes fit `codec` under `cfg`.
///
/// The conditioned linear predictor gets the gain that makes a grey
/// conditioning image decode to its own grey level after a full sampling
/// pass, measured by decoding an all-ones latent.
pub fn toy_predictor(
    kind: ToyKind,
    toy: &ToyParams,
    cfg: &PipelineConfig,
    sampling: &AlphaSchedule,
    codec: &dyn LatentCodec,
) -> Result<Box<dyn NoisePredictor>> {
    let high = codec.f_vae() * cfg.s_low;
    let latent = codec.latent_shape_for(high, high)?;
    let cond = Shape::new(codec.c_pixel(), cfg.s_low, cfg.s_low);
    Ok(match kind {
        ToyKind::Zero => Box::new(ZeroToyPredictor::new(latent, cond)),
        ToyKind::Linear if !toy.conditioned => {
            Box::new(LinearToyPredictor::new(toy.scale, 0.0, latent, cond)?)
        }
        ToyKind::Linear => {
            let ones = LatentTensor::new(Tensor3::filled(latent, 1.0))?;
            let flat = codec.decode(&ones)?.mean();
            Box::new(LinearToyPredictor::matched(
                toy.scale, sampling, flat, latent, cond,
            )?)
        }
    })
}
