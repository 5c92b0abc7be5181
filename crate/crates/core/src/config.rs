//! Run configuration and the TOML file that mirrors it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::{make_schedule, AlphaSchedule, SchedulerConfig};

/// Knobs of one embedding/extraction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Side length the cover is shrunk to before super-resolution.
    pub s_low: usize,
    /// Residual blend factor `f_s`.
    pub strength: f64,
    pub infer_steps: usize,
    pub invert_steps: usize,
    /// Side length of cover and watermarked images.
    pub resolution: usize,
    /// Fixed-point refinements per inversion step; 0 gives plain DDIM inversion.
    pub inversion_refinement: usize,
    pub schedule: SchedulerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            s_low: 128,
            strength: 0.4,
            infer_steps: 25,
            invert_steps: 25,
            resolution: 512,
            inversion_refinement: 20,
            schedule: SchedulerConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_low == 0 || self.s_low > self.resolution {
            return Err(Error::invalid(format!(
                "s_low {} must be in 1..={}",
                self.s_low, self.resolution
            )));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::invalid(format!(
                "strength {} outside [0,1]",
                self.strength
            )));
        }
        if self.infer_steps == 0 || self.invert_steps == 0 {
            return Err(Error::invalid("step counts must be at least 1"));
        }
        self.sampling_schedule()?;
        self.inversion_schedule()?;
        Ok(())
    }

    pub fn sampling_schedule(&self) -> Result<AlphaSchedule> {
        make_schedule(&SchedulerConfig {
            steps: self.infer_steps,
            ..self.schedule.clone()
        })
    }

    pub fn inversion_schedule(&self) -> Result<AlphaSchedule> {
        make_schedule(&SchedulerConfig {
            steps: self.invert_steps,
            ..self.schedule.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianShadingParams {
    pub f_c: usize,
    pub f_hw: usize,
}

impl Default for GaussianShadingParams {
    fn default() -> Self {
        Self { f_c: 2, f_hw: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeRingParams {
    pub radius: usize,
    pub threshold: f64,
}

impl Default for TreeRingParams {
    fn default() -> Self {
        Self {
            radius: 30,
            threshold: 0.9,
        }
    }
}

/// Parameters of the analytic stand-ins for the SR network and its autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyParams {
    /// Self-feedback `a` of the linear noise predictor.
    pub scale: f64,
    /// Pixel amplitude of one latent unit in the analytic codec.
    pub codec_gain: f64,
    /// Whether the linear predictor sees the low-resolution image.
    pub conditioned: bool,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            scale: 0.5,
            codec_gain: 0.05,
            conditioned: true,
        }
    }
}

/// Everything a config file may hold.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub pipeline: PipelineConfig,
    pub gshade: GaussianShadingParams,
    pub treering: TreeRingParams,
    pub toy: ToyParams,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.pipeline.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

/// Number of payload bits a `(c, h, w)` latent carries under replication
/// divisors `f_c` (channels) and `f_hw` (both spatial axes).
pub fn watermark_bit_length(
    c_latent: usize,
    latent_h: usize,
    latent_w: usize,
    f_c: usize,
    f_hw: usize,
) -> Result<usize> {
    if f_c == 0 || f_hw == 0 {
        return Err(Error::invalid("replication factors must be positive"));
    }
    if !c_latent.is_multiple_of(f_c)
        || !latent_h.is_multiple_of(f_hw)
        || !latent_w.is_multiple_of(f_hw)
    {
        return Err(Error::invalid(format!(
            "f_c={f_c}, f_hw={f_hw} do not divide latent {c_latent}x{latent_h}x{latent_w}"
        )));
    }
    let len = (c_latent / f_c) * (latent_h / f_hw) * (latent_w / f_hw);
    if len == 0 {
        return Err(Error::invalid("latent too small for any payload bit"));
    }
    Ok(len)
}
