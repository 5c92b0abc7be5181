use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use inversemark::backend::{codec_latent_shape, Backend, CodecSpec, ModelSpec};
use inversemark::distortions::Distortion;
use inversemark::harness::{
    evaluate, ingest, report, square_crop, summary_markdown, InjectorKind, KeyPlan,
};
use inversemark::imageio::{load_image, save_png};
use inversemark::pipeline::{Extraction, Injector};
use inversemark::seeds::{derive_seed, Stream};
use inversemark::tensor::ImageTensor;
use inversemark::{BitString, Error, KeyFile, Result, RunConfig};

#[derive(Parser)]
#[command(
    name = "inversemark",
    version,
    about = "Training-free image watermarking"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// zero | linear | bridge:<host:port>
    #[arg(long, global = true, default_value = "linear")]
    model: String,
    /// analytic | bridge:<host:port>
    #[arg(long, global = true, default_value = "analytic")]
    codec: String,
    #[arg(long, global = true, value_enum)]
    injector: Option<InjectorArg>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Residual strength f_s.
    #[arg(long, global = true)]
    strength: Option<f64>,
    #[arg(long = "s-low", global = true)]
    s_low: Option<usize>,
    /// Sampling and inversion step count.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    resolution: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InjectorArg {
    Gshade,
    Treering,
}

impl From<InjectorArg> for InjectorKind {
    fn from(a: InjectorArg) -> Self {
        match a {
            InjectorArg::Gshade => InjectorKind::Gshade,
            InjectorArg::Treering => InjectorKind::Treering,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key file for the configured latent shape.
    Keygen {
        /// Payload as a 0/1 string; random from the seed when omitted.
        #[arg(long)]
        payload: Option<String>,
    },
    /// Watermark one image.
    Embed {
        #[arg(long)]
        key: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Recover the payload or test for the watermark.
    Extract {
        #[arg(long)]
        key: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Apply one distortion to an image.
    Attack {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        op: AttackOp,
        /// JPEG quality.
        #[arg(long = "q")]
        quality: Option<u8>,
        /// Crop window ratio.
        #[arg(long)]
        ratio: Option<f64>,
        /// Blur radius.
        #[arg(long = "r")]
        radius: Option<f64>,
        /// Noise standard deviation.
        #[arg(long)]
        std: Option<f64>,
        /// Brightness factor.
        #[arg(long = "f")]
        factor: Option<f64>,
        /// Rotation angle in degrees.
        #[arg(long)]
        deg: Option<f64>,
    },
    /// Run a dataset through embed, distortions and extraction.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Distortion set; defaults to the one matching the injector.
        #[arg(long, value_enum)]
        suite: Option<Suite>,
        /// Only the first N images (sorted by name).
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackOp {
    Jpeg,
    Crop,
    Blur,
    Noise,
    Brightness,
    Rotate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Normal,
    Treering,
    None,
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let p = &mut cfg.pipeline;
    if let Some(v) = c.strength {
        p.strength = v;
    }
    if let Some(v) = c.s_low {
        p.s_low = v;
    }
    if let Some(v) = c.steps {
        p.infer_steps = v;
        p.invert_steps = v;
    }
    if let Some(v) = c.resolution {
        p.resolution = v;
    }
    p.validate()?;
    Ok(cfg)
}

fn require_out(c: &Common) -> Result<&Path> {
    c.out
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--out is required".into()))
}

fn backend(c: &Common, cfg: &RunConfig) -> Result<Backend> {
    Backend::new(
        cfg,
        &c.model.parse::<ModelSpec>()?,
        &c.codec.parse::<CodecSpec>()?,
    )
}

fn load_key(c: &Common, path: &Path) -> Result<Injector> {
    let injector = match KeyFile::load(path)? {
        KeyFile::GaussianShading(k) => Injector::GaussianShading(k),
        KeyFile::TreeRing(k) => Injector::TreeRing(k),
    };
    if let Some(want) = c.injector {
        let want = InjectorKind::from(want).name();
        if want != injector.name() {
            return Err(Error::InvalidArgument(format!(
                "--injector {want} does not match the {} key in {}",
                injector.name(),
                path.display()
            )));
        }
    }
    Ok(injector)
}

fn load_sized(path: &Path, resolution: usize) -> Result<ImageTensor> {
    let img = load_image(path)?;
    let s = img.shape();
    if s.height == resolution && s.width == resolution {
        Ok(img)
    } else {
        square_crop(&img, resolution)
    }
}

fn write_or_print(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    match out {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn keygen(c: &Common, payload: Option<&str>) -> Result<()> {
    let cfg = run_config(c)?;
    let out = require_out(c)?;
    let kind = c.injector.map_or(InjectorKind::Gshade, InjectorKind::from);
    let latent = codec_latent_shape(&c.codec.parse()?, &cfg)?;
    let file = match KeyPlan::new(kind, &cfg).injector(0, latent)? {
        Injector::GaussianShading(mut k) => {
            if let Some(p) = payload {
                k.payload = BitString::parse_binary(p)?;
            }
            k.check_latent(latent)?;
            KeyFile::GaussianShading(k)
        }
        Injector::TreeRing(k) => {
            if payload.is_some() {
                return Err(Error::InvalidArgument(
                    "tree-ring keys carry no payload".into(),
                ));
            }
            KeyFile::TreeRing(k)
        }
    };
    file.save(out)?;
    eprintln!(
        "wrote {} key for latent {latent} to {}",
        kind.name(),
        out.display()
    );
    Ok(())
}

fn embed(c: &Common, key: &Path, input: &Path) -> Result<()> {
    let cfg = run_config(c)?;
    let out = require_out(c)?;
    let injector = load_key(c, key)?;
    let backend = backend(c, &cfg)?;
    let pipeline = backend.pipeline()?;
    let cover = load_sized(input, cfg.pipeline.resolution)?;
    let seed = derive_seed(cfg.seed, &[0, Stream::Noise as u64]);
    let result = pipeline.embed(&cover, &injector, seed)?;
    save_png(&result.watermarked, out)?;
    write_or_print(
        &json!({
            "out": out.display().to_string(),
            "psnr": result.fidelity.psnr,
            "ssim": result.fidelity.ssim,
        }),
        None,
    )
}

fn extract(c: &Common, key: &Path, input: &Path) -> Result<()> {
    let cfg = run_config(c)?;
    let injector = load_key(c, key)?;
    let backend = backend(c, &cfg)?;
    let pipeline = backend.pipeline()?;
    let img = load_sized(input, cfg.pipeline.resolution)?;
    let value = match pipeline.extract(&img, &injector)?.outcome {
        Extraction::Bits { bits, accuracy } => json!({
            "injector": "gshade",
            "bits": bits.len(),
            "payload": bits.to_hex(),
            "accuracy": accuracy,
        }),
        Extraction::Detection(r) => json!({ "injector": "treering", "report": r }),
    };
    write_or_print(&value, c.out.as_deref())
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidArgument(format!("this --op needs --{flag}")))
}

fn attack(c: &Common, input: &Path, op: AttackOp, cmd: &Command) -> Result<()> {
    let Command::Attack {
        quality,
        ratio,
        radius,
        std,
        factor,
        deg,
        ..
    } = *cmd
    else {
        unreachable!()
    };
    let cfg = run_config(c)?;
    let out = require_out(c)?;
    let d = match op {
        AttackOp::Jpeg => Distortion::Jpeg {
            quality: need(quality, "q")?,
        },
        AttackOp::Crop => Distortion::Crop {
            ratio: need(ratio, "ratio")?,
        },
        AttackOp::Blur => Distortion::Blur {
            radius: need(radius, "r")?,
        },
        AttackOp::Noise => Distortion::Noise {
            std: need(std, "std")?,
        },
        AttackOp::Brightness => Distortion::Brightness {
            factor: need(factor, "f")?,
        },
        AttackOp::Rotate => Distortion::Rotate {
            degrees: need(deg, "deg")?,
        },
    };
    let img = load_image(input)?;
    let seed = derive_seed(cfg.seed, &[0, Stream::Distortion as u64]);
    save_png(&d.apply(&img, seed)?, out)?;
    eprintln!("applied {d} to {}", input.display());
    Ok(())
}

fn run_evaluate(
    c: &Common,
    dataset: &Path,
    suite: Option<Suite>,
    limit: Option<usize>,
) -> Result<()> {
    let cfg = run_config(c)?;
    let out = require_out(c)?;
    let kind = c.injector.map_or(InjectorKind::Gshade, InjectorKind::from);
    let mut ingested = ingest(dataset, cfg.pipeline.resolution)?;
    if let Some(n) = limit {
        ingested.images.truncate(n);
    }
    let suite = suite.unwrap_or(match kind {
        InjectorKind::Gshade => Suite::Normal,
        InjectorKind::Treering => Suite::Treering,
    });
    let distortions = match suite {
        Suite::Normal => Distortion::normal_suite(),
        Suite::Treering => Distortion::treering_suite(),
        Suite::None => Vec::new(),
    };
    let backend = backend(c, &cfg)?;
    let pipeline = backend.pipeline()?;
    let plan = KeyPlan::new(kind, &cfg);
    let name = dataset.file_name().map_or_else(
        || dataset.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    );
    let manifest = evaluate(&name, &ingested.images, &plan, &pipeline, &distortions)?;
    let files = report(&manifest, out)?;
    print!("{}", summary_markdown(&manifest));
    eprintln!("wrote {}", files.records_csv.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Keygen { payload } => keygen(c, payload.as_deref()),
        Command::Embed { key, input } => embed(c, key, input),
        Command::Extract { key, input } => extract(c, key, input),
        cmd @ Command::Attack { input, op, .. } => attack(c, input, *op, cmd),
        Command::Evaluate {
            dataset,
            suite,
            limit,
        } => run_evaluate(c, dataset, *suite, *limit),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
