//! Training-free image watermarking through a super-resolution diffusion model.
//!
//! A payload is hidden in the initial noise of a DDIM-sampled
//! super-resolution pass, the SR output's residual is blended into the cover
//! image, and extraction recovers the noise by DDIM inversion.

pub mod backend;
pub mod bits;
pub mod bridge;
pub mod codec;
pub mod config;
pub mod denoiser;
pub mod distortions;
pub mod error;
pub mod fourier;
pub mod gshade;
pub mod harness;
pub mod imageio;
pub mod keys;
pub mod metrics;
pub mod pipeline;
pub mod scheduler;
pub mod seeds;
pub mod stats;
pub mod tensor;
pub mod treering;

pub use bits::BitString;
pub use codec::{AnalyticCodec, LatentCodec};
pub use config::{PipelineConfig, RunConfig};
pub use denoiser::{LinearToyPredictor, NoisePredictor, ZeroToyPredictor};
pub use error::{Error, Result};
pub use keys::{KeyFile, TreeRingKey, WatermarkKey};
pub use pipeline::{EmbedResult, ExtractResult, Extraction, Injector, Pipeline};
pub use scheduler::{ddim_invert, ddim_sample, make_schedule, AlphaSchedule, SchedulerConfig};
pub use tensor::{ImageTensor, LatentTensor, ResidualTensor, Shape, Tensor3};
pub use treering::DetectionReport;
