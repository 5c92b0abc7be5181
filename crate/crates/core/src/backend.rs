//! Model and codec selection shared by the CLI and the C interface.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use crate::bridge::{BridgeClient, BridgeCodec, BridgePredictor};
use crate::codec::{AnalyticCodec, LatentCodec};
use crate::config::RunConfig;
use crate::denoiser::NoisePredictor;
use crate::error::{Error, Result};
use crate::pipeline::{toy_predictor, Pipeline, ToyKind};
use crate::scheduler::AlphaSchedule;
use crate::tensor::Shape;

/// How long a bridge request may take before it counts as lost.
pub const BRIDGE_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Zero,
    Linear,
    Bridge(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodecSpec {
    Analytic,
    Bridge(String),
}

fn bridge_addr(s: &str) -> Option<Result<String>> {
    s.strip_prefix("bridge:").map(|addr| {
        if addr.is_empty() {
            Err(Error::invalid("bridge address missing after 'bridge:'"))
        } else {
            Ok(addr.to_string())
        }
    })
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(ModelSpec::Zero),
            "linear" => Ok(ModelSpec::Linear),
            _ => match bridge_addr(s) {
                Some(addr) => Ok(ModelSpec::Bridge(addr?)),
                None => Err(Error::invalid(format!(
                    "unknown model '{s}' (zero, linear, bridge:<addr>)"
                ))),
            },
        }
    }
}

impl FromStr for CodecSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(CodecSpec::Analytic),
            _ => match bridge_addr(s) {
                Some(addr) => Ok(CodecSpec::Bridge(addr?)),
                None => Err(Error::invalid(format!(
                    "unknown codec '{s}' (analytic, bridge:<addr>)"
                ))),
            },
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Zero => f.write_str("zero"),
            ModelSpec::Linear => f.write_str("linear"),
            ModelSpec::Bridge(a) => write!(f, "bridge:{a}"),
        }
    }
}

impl fmt::Display for CodecSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodecSpec::Analytic => f.write_str("analytic"),
            CodecSpec::Bridge(a) => write!(f, "bridge:{a}"),
        }
    }
}

/// An owned model, codec and schedule set from which pipelines are borrowed.
pub struct Backend {
    config: RunConfig,
    model: Box<dyn NoisePredictor>,
    codec: Box<dyn LatentCodec>,
    sampling: AlphaSchedule,
    inversion: AlphaSchedule,
}

/// Opens each distinct bridge address once.
struct Connections(Vec<(String, Arc<BridgeClient>)>);

impl Connections {
    fn get(&mut self, addr: &str) -> Result<Arc<BridgeClient>> {
        if let Some((_, c)) = self.0.iter().find(|(a, _)| a == addr) {
            return Ok(c.clone());
        }
        let client = Arc::new(BridgeClient::connect(addr, BRIDGE_TIMEOUT)?);
        self.0.push((addr.to_string(), client.clone()));
        Ok(client)
    }
}

fn build_codec(
    spec: &CodecSpec,
    config: &RunConfig,
    conns: &mut Connections,
) -> Result<Box<dyn LatentCodec>> {
    Ok(match spec {
        CodecSpec::Analytic => Box::new(AnalyticCodec::new(config.toy.codec_gain)?),
        CodecSpec::Bridge(addr) => Box::new(BridgeCodec::new(conns.get(addr)?)),
    })
}

/// Latent shape the configured pipeline works on for a given codec.
pub fn latent_shape(codec: &dyn LatentCodec, config: &RunConfig) -> Result<Shape> {
    let high = codec.f_vae() * config.pipeline.s_low;
    codec.latent_shape_for(high, high)
}

/// Latent shape for `spec` without building a model.
pub fn codec_latent_shape(spec: &CodecSpec, config: &RunConfig) -> Result<Shape> {
    config.pipeline.validate()?;
    let codec = build_codec(spec, config, &mut Connections(Vec::new()))?;
    latent_shape(codec.as_ref(), config)
}

impl Backend {
    /// Builds the model and codec; a remote model's `abar` table replaces the
    /// locally configured schedule.
    pub fn new(config: &RunConfig, model: &ModelSpec, codec: &CodecSpec) -> Result<Self> {
        let cfg = &config.pipeline;
        cfg.validate()?;
        let mut conns = Connections(Vec::new());
        let codec = build_codec(codec, config, &mut conns)?;
        let mut sampling = cfg.sampling_schedule()?;
        let mut inversion = cfg.inversion_schedule()?;
        let model: Box<dyn NoisePredictor> = match model {
            ModelSpec::Zero | ModelSpec::Linear => {
                let kind = if *model == ModelSpec::Zero {
                    ToyKind::Zero
                } else {
                    ToyKind::Linear
                };
                toy_predictor(kind, &config.toy, cfg, &sampling, codec.as_ref())?
            }
            ModelSpec::Bridge(addr) => {
                let client = conns.get(addr)?;
                if let Some(s) = client.info().alpha_schedule(cfg.infer_steps) {
                    sampling = s?;
                }
                if let Some(s) = client.info().alpha_schedule(cfg.invert_steps) {
                    inversion = s?;
                }
                let latent = latent_shape(codec.as_ref(), config)?;
                let cond = Shape::new(codec.c_pixel(), cfg.s_low, cfg.s_low);
                Box::new(BridgePredictor::new(client, latent, cond)?)
            }
        };
        Ok(Self {
            config: config.clone(),
            model,
            codec,
            sampling,
            inversion,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn latent_shape(&self) -> Result<Shape> {
        latent_shape(self.codec.as_ref(), &self.config)
    }

    pub fn pipeline(&self) -> Result<Pipeline<'_>> {
        Pipeline::with_schedules(
            &self.config.pipeline,
            self.model.as_ref(),
            self.codec.as_ref(),
            self.sampling.clone(),
            self.inversion.clone(),
        )
    }
}
