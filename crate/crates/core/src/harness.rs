//! Dataset ingestion, robustness evaluation and report files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::config::RunConfig;
use crate::distortions::Distortion;
use crate::error::{Error, Result};
use crate::imageio::load_image;
use crate::keys::WatermarkKey;
use crate::pipeline::{Injector, Pipeline};
use crate::seeds::{derive_seed, Stream};
use crate::tensor::{ImageTensor, Shape, Tensor3};
use crate::treering::tr_make_key;

#[derive(Debug, Clone)]
pub struct NamedImage {
    pub name: String,
    pub image: ImageTensor,
}

/// Resizes the short side to `resolution` (long side rounded down) and
/// center-crops to a square.
pub fn square_crop(img: &ImageTensor, resolution: usize) -> Result<ImageTensor> {
    let s = img.shape();
    let short = s.height.min(s.width);
    let scale = |n: usize| (n * resolution) / short;
    let resized = img.resize(scale(s.height), scale(s.width))?;
    let r = resized.shape();
    let (oy, ox) = ((r.height - resolution) / 2, (r.width - resolution) / 2);
    let t = resized.tensor();
    ImageTensor::new(Tensor3::from_fn(
        Shape::new(r.channels, resolution, resolution),
        |c, y, x| t.get(c, y + oy, x + ox),
    ))
}

#[derive(Debug, Default)]
pub struct Ingested {
    pub images: Vec<NamedImage>,
    /// One message per skipped file.
    pub warnings: Vec<String>,
}

/// Loads every decodable image in `dir` (sorted by file name) at
/// `resolution x resolution`. Undecodable files are skipped with a warning.
pub fn ingest(dir: &Path, resolution: usize) -> Result<Ingested> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io_at(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut out = Ingested::default();
    for path in paths {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        match load_image(&path).and_then(|img| square_crop(&img, resolution)) {
            Ok(image) => out.images.push(NamedImage { name, image }),
            Err(e) => {
                let msg = format!("skipping {}: {e}", path.display());
                warn!("{msg}");
                out.warnings.push(msg);
            }
        }
    }
    if out.images.is_empty() {
        return Err(Error::invalid(format!(
            "no decodable images in {}",
            dir.display()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectorKind {
    Gshade,
    Treering,
}

impl InjectorKind {
    pub fn name(self) -> &'static str {
        match self {
            InjectorKind::Gshade => "gshade",
            InjectorKind::Treering => "treering",
        }
    }
}

/// Keys for a run: one cipher key or ring key per run, one payload per image.
#[derive(Debug, Clone)]
pub struct KeyPlan {
    pub kind: InjectorKind,
    pub config: RunConfig,
}

impl KeyPlan {
    pub fn new(kind: InjectorKind, config: &RunConfig) -> Self {
        Self {
            kind,
            config: config.clone(),
        }
    }

    /// The injector for image `index` on latents of shape `latent`.
    pub fn injector(&self, index: usize, latent: Shape) -> Result<Injector> {
        let seed = self.config.seed;
        match self.kind {
            InjectorKind::Gshade => {
                let mut key = gshade_run_key(seed, &self.config);
                let len = key.bit_length(latent)?;
                let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(
                    seed,
                    &[index as u64, Stream::Payload as u64],
                ));
                key.payload = BitString::random(len, &mut rng);
                Ok(Injector::GaussianShading(key))
            }
            InjectorKind::Treering => Ok(Injector::TreeRing(tr_make_key(
                self.config.treering.radius,
                derive_seed(seed, &[Stream::CipherKey as u64]),
                self.config.treering.threshold,
                latent.height,
                latent.width,
            )?)),
        }
    }
}

/// Cipher key and nonce derived from a run seed; payload left empty.
pub fn gshade_run_key(seed: u64, config: &RunConfig) -> WatermarkKey {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, &[Stream::CipherKey as u64]));
    let mut cipher_key = [0u8; 32];
    let mut nonce = [0u8; 12];
    rng.fill(&mut cipher_key);
    rng.fill(&mut nonce);
    WatermarkKey {
        cipher_key,
        nonce,
        f_c: config.gshade.f_c,
        f_hw: config.gshade.f_hw,
        payload: BitString::zeros(0),
    }
}

/// Per-image outcome. `scores[j]` belongs to column `j` of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image: String,
    /// Payload hex for Gaussian Shading, empty for Tree-Ring.
    pub payload: String,
    pub psnr: f64,
    pub ssim: f64,
    pub scores: Vec<f64>,
    /// Semicolon-separated failure notes, empty on success.
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub psnr: f64,
    pub ssim: f64,
    pub scores: Vec<f64>,
    /// Mean over the non-identity columns, if any.
    pub average: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub injector: InjectorKind,
    pub config: RunConfig,
    /// `identity` followed by the distortion labels, or empty.
    pub columns: Vec<String>,
    pub records: Vec<ImageRecord>,
    pub summary: SummaryRow,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Means per column. Fidelity averages skip images whose embedding failed.
pub fn summarize(records: &[ImageRecord], columns: usize) -> SummaryRow {
    let scores: Vec<f64> = (0..columns)
        .map(|j| mean(records.iter().map(|r| r.scores[j])))
        .collect();
    let average = (columns > 1).then(|| mean(scores[1..].iter().copied()));
    SummaryRow {
        psnr: mean(records.iter().map(|r| r.psnr).filter(|v| !v.is_nan())),
        ssim: mean(records.iter().map(|r| r.ssim).filter(|v| !v.is_nan())),
        scores,
        average,
    }
}

fn evaluate_one(
    index: usize,
    item: &NamedImage,
    plan: &KeyPlan,
    pipeline: &Pipeline,
    matrix: &[Distortion],
) -> ImageRecord {
    let seed = plan.config.seed;
    let mut record = ImageRecord {
        image: item.name.clone(),
        payload: String::new(),
        psnr: f64::NAN,
        ssim: f64::NAN,
        scores: vec![0.0; matrix.len()],
        error: String::new(),
    };
    let mut notes = Vec::new();
    let injector = match plan.injector(index, pipeline.latent_shape()) {
        Ok(i) => i,
        Err(e) => {
            record.error = format!("key: {e}");
            return record;
        }
    };
    if let Injector::GaussianShading(k) = &injector {
        record.payload = k.payload.to_hex();
    }
    let noise_seed = derive_seed(seed, &[index as u64, Stream::Noise as u64]);
    let embedded = match pipeline.embed(&item.image, &injector, noise_seed) {
        Ok(e) => e,
        Err(e) => {
            record.error = format!("embed: {e}");
            return record;
        }
    };
    record.psnr = embedded.fidelity.psnr;
    record.ssim = embedded.fidelity.ssim;
    for (j, d) in matrix.iter().enumerate() {
        let dseed = derive_seed(seed, &[index as u64, Stream::Distortion as u64, j as u64]);
        let result = d
            .apply(&embedded.watermarked, dseed)
            .and_then(|attacked| pipeline.extract(&attacked, &injector));
        match result {
            Ok(x) => record.scores[j] = x.score(),
            Err(e) => notes.push(format!("{}: {e}", d.label())),
        }
    }
    record.error = notes.join("; ");
    record
}

/// Embeds every image, runs each distortion (identity first) and extracts.
/// Failures are recorded as a score of 0 with a note; the run continues.
pub fn evaluate(
    dataset: &str,
    images: &[NamedImage],
    plan: &KeyPlan,
    pipeline: &Pipeline,
    distortions: &[Distortion],
) -> Result<RunManifest> {
    if images.is_empty() {
        return Err(Error::invalid("no images to evaluate"));
    }
    let mut matrix = Vec::new();
    if !distortions.is_empty() {
        matrix.push(Distortion::Identity);
        matrix.extend(distortions.iter().filter(|d| **d != Distortion::Identity));
    }
    let run = |(i, item): (usize, &NamedImage)| evaluate_one(i, item, plan, pipeline, &matrix);
    let records: Vec<ImageRecord> = if pipeline.share_safe() {
        images.par_iter().enumerate().map(run).collect()
    } else {
        images.iter().enumerate().map(run).collect()
    };
    let summary = summarize(&records, matrix.len());
    Ok(RunManifest {
        dataset: dataset.to_string(),
        injector: plan.kind,
        config: plan.config.clone(),
        columns: matrix.iter().map(|d| d.label()).collect(),
        records,
        summary,
    })
}

const FIXED_COLUMNS: [&str; 4] = ["image", "payload", "psnr", "ssim"];

/// Per-image CSV: image, payload, psnr, ssim, one column per distortion, error.
pub fn write_records_csv(manifest: &RunManifest, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(manifest.columns.iter().map(String::as_str));
    header.push("error");
    w.write_record(&header)?;
    for r in &manifest.records {
        let mut row = vec![
            r.image.clone(),
            r.payload.clone(),
            r.psnr.to_string(),
            r.ssim.to_string(),
        ];
        row.extend(r.scores.iter().map(f64::to_string));
        row.push(r.error.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a CSV written by [`write_records_csv`]; returns the distortion
/// columns and the records.
pub fn read_records_csv(path: &Path) -> Result<(Vec<String>, Vec<ImageRecord>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < FIXED_COLUMNS.len() + 1
        || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS
        || header.last().map(String::as_str) != Some("error")
    {
        return Err(Error::invalid("not a records CSV"));
    }
    let columns = header[FIXED_COLUMNS.len()..header.len() - 1].to_vec();
    let num = |s: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::invalid(format!("bad number {s:?} in records CSV")))
    };
    let mut records = Vec::new();
    for row in r.records() {
        let row = row?;
        let scores = (0..columns.len())
            .map(|j| num(&row[FIXED_COLUMNS.len() + j]))
            .collect::<Result<_>>()?;
        records.push(ImageRecord {
            image: row[0].to_string(),
            payload: row[1].to_string(),
            psnr: num(&row[2])?,
            ssim: num(&row[3])?,
            scores,
            error: row[header.len() - 1].to_string(),
        });
    }
    Ok((columns, records))
}

fn score_name(kind: InjectorKind) -> &'static str {
    match kind {
        InjectorKind::Gshade => "bit accuracy",
        InjectorKind::Treering => "detection rate",
    }
}

/// Markdown summary: a one-row wide table (fidelity, then every column and
/// the average) followed by a long table with one row per distortion.
pub fn summary_markdown(m: &RunManifest) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Evaluation summary\n");
    let _ = writeln!(
        s,
        "dataset: `{}`, images: {}, injector: {}, seed: {}, metric: {}\n",
        m.dataset,
        m.records.len(),
        m.injector.name(),
        m.config.seed,
        score_name(m.injector)
    );
    let mut head = vec!["PSNR".to_string(), "SSIM".to_string()];
    let mut row = vec![
        format!("{:.2}", m.summary.psnr),
        format!("{:.4}", m.summary.ssim),
    ];
    for (c, v) in m.columns.iter().zip(&m.summary.scores) {
        head.push(c.clone());
        row.push(format!("{v:.4}"));
    }
    if let Some(avg) = m.summary.average {
        head.push("Average".into());
        row.push(format!("{avg:.4}"));
    }
    let _ = writeln!(s, "| {} |", head.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(head.len()));
    let _ = writeln!(s, "| {} |\n", row.join(" | "));
    if !m.columns.is_empty() {
        let _ = writeln!(s, "| Distortion | Mean {} |", score_name(m.injector));
        let _ = writeln!(s, "|---|---|");
        for (c, v) in m.columns.iter().zip(&m.summary.scores) {
            let _ = writeln!(s, "| {c} | {v:.4} |");
        }
        if let Some(avg) = m.summary.average {
            let _ = writeln!(s, "| Average | {avg:.4} |");
        }
    }
    let failures = m.records.iter().filter(|r| !r.error.is_empty()).count();
    if failures > 0 {
        let _ = writeln!(
            s,
            "\n{failures} image(s) recorded failures; see records.csv."
        );
    }
    s
}

/// Files written by [`report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub records_csv: PathBuf,
    pub summary_md: PathBuf,
    pub config_toml: PathBuf,
}

/// Writes `records.csv`, `summary.md` and `config.toml` into `out_dir`.
pub fn report(m: &RunManifest, out_dir: &Path) -> Result<ReportFiles> {
    std::fs::create_dir_all(out_dir)?;
    let files = ReportFiles {
        records_csv: out_dir.join("records.csv"),
        summary_md: out_dir.join("summary.md"),
        config_toml: out_dir.join("config.toml"),
    };
    write_records_csv(m, &files.records_csv)?;
    std::fs::write(&files.summary_md, summary_markdown(m))?;
    std::fs::write(&files.config_toml, m.config.to_toml_string()?)?;
    Ok(files)
}
