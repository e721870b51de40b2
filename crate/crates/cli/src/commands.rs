//! The `score`, `explain`, `evaluate` and `bank` commands.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use iqa_core::eval::{
    cached_scorer, evaluate, load_manifest, CacheKey, Domain, EmbeddingCache, EvalOptions,
    ManifestColumns,
};
use iqa_core::{EmbeddingProvider, EmbeddingVector, ImageInput, QualityReport, Scorer};
use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::explain::Explanation;

pub const REPORT_FILE: &str = "report.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// How many units of work a command attempted and completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub succeeded: usize,
    pub failed: usize,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.succeeded > 0
    }
}

fn open_output(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn embed_cached(
    provider: &dyn EmbeddingProvider,
    cache: Option<&EmbeddingCache>,
    input: &ImageInput,
) -> Result<EmbeddingVector> {
    let key = cache.map(|_| {
        CacheKey::new(input.bytes(), &provider.descriptor().model_id, Domain::Image)
    });
    if let (Some(cache), Some(key)) = (cache, &key) {
        if let Some(v) = cache.get(key)? {
            return Ok(v);
        }
    }
    let v = provider.embed_image(input)?;
    if let (Some(cache), Some(key)) = (cache, &key) {
        if let Err(e) = cache.put(key, &v) {
            eprintln!("warning: cache write failed: {e}");
        }
    }
    Ok(v)
}

fn score_path(
    provider: &dyn EmbeddingProvider,
    scorer: &Scorer,
    cache: Option<&EmbeddingCache>,
    path: &Path,
) -> Result<QualityReport> {
    let input = ImageInput::from_path(path)?;
    let emb = embed_cached(provider, cache, &input)?;
    Ok(scorer.score_embedding(input.id(), &emb)?)
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    path: &'a Path,
    #[serde(flatten)]
    report: &'a QualityReport,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    path: &'a Path,
    error: String,
}

pub fn render_report(report: &QualityReport) -> String {
    let features: Vec<String> = report
        .per_feature
        .iter()
        .map(|d| format!("{} {:.2}", d.feature_label, d.value))
        .collect();
    format!("q={:.2} ({})", report.overall, features.join(", "))
}

/// Scores each image independently. Failures are reported in the output
/// stream and do not stop the remaining images.
pub fn score_with(
    provider: &dyn EmbeddingProvider,
    config: &RunConfig,
    images: &[PathBuf],
    out: &mut dyn Write,
) -> Result<Outcome> {
    if images.is_empty() {
        bail!("no images given");
    }
    let cache = config.cache()?;
    let scorer = cached_scorer(provider, &config.bank, cache.as_ref())?;
    let mut outcome = Outcome { succeeded: 0, failed: 0 };
    for path in images {
        match score_path(provider, &scorer, cache.as_ref(), path) {
            Ok(report) => {
                outcome.succeeded += 1;
                match config.format {
                    Format::Structured => {
                        serde_json::to_writer(&mut *out, &ScoreLine { path, report: &report })?;
                        writeln!(out)?;
                    }
                    Format::Human => writeln!(out, "{}: {}", path.display(), render_report(&report))?,
                }
            }
            Err(e) => {
                outcome.failed += 1;
                let error = crate::error_chain(&e);
                match config.format {
                    Format::Structured => {
                        serde_json::to_writer(&mut *out, &ErrorLine { path, error })?;
                        writeln!(out)?;
                    }
                    Format::Human => writeln!(out, "{}: error: {error}", path.display())?,
                }
            }
        }
    }
    out.flush()?;
    Ok(outcome)
}

pub fn cmd_score(config: &RunConfig, images: &[PathBuf]) -> Result<Outcome> {
    let provider = config.provider()?;
    let mut out = open_output(config.out.as_deref())?;
    score_with(provider.as_ref(), config, images, &mut out)
}

pub fn explain_with(
    provider: &dyn EmbeddingProvider,
    config: &RunConfig,
    image: &Path,
    out: &mut dyn Write,
) -> Result<Outcome> {
    let cache = config.cache()?;
    let scorer = cached_scorer(provider, &config.bank, cache.as_ref())?;
    let report = score_path(provider, &scorer, cache.as_ref(), image)
        .with_context(|| format!("cannot score {}", image.display()))?;
    let explanation = Explanation::from_report(&report, config.threshold);
    match config.format {
        Format::Human => out.write_all(explanation.render().as_bytes())?,
        Format::Structured => {
            serde_json::to_writer(&mut *out, &explanation)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(Outcome { succeeded: 1, failed: 0 })
}

pub fn cmd_explain(config: &RunConfig, image: &Path) -> Result<Outcome> {
    let provider = config.provider()?;
    let mut out = open_output(config.out.as_deref())?;
    explain_with(provider.as_ref(), config, image, &mut out)
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    n: usize,
    skipped: usize,
    srocc: Option<f64>,
    plcc: Option<f64>,
    report: &'a Path,
    predictions: &'a Path,
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |v| format!("{v:.3}"))
}

pub fn evaluate_with(
    provider: &dyn EmbeddingProvider,
    config: &RunConfig,
    manifest: &Path,
    images_dir: &Path,
    columns: &ManifestColumns,
    out: &mut dyn Write,
) -> Result<Outcome> {
    if !images_dir.is_dir() {
        bail!("images directory {} does not exist", images_dir.display());
    }
    let loaded = load_manifest(manifest, images_dir, columns)
        .with_context(|| format!("cannot load manifest {}", manifest.display()))?;
    for row in &loaded.rejected {
        eprintln!("warning: manifest line {}: {}", row.line, row.reason);
    }
    let cache = config.cache()?;
    let run = evaluate(
        provider,
        &config.bank,
        &loaded.records,
        cache.as_ref(),
        &EvalOptions { workers: config.workers },
    )?;
    let result = &run.result;

    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let report_path = dir.join(REPORT_FILE);
    let predictions_path = dir.join(PREDICTIONS_FILE);
    result.write_files(&report_path, &predictions_path)?;

    match config.format {
        Format::Human => {
            writeln!(out, "images scored: {} (skipped {})", result.n, result.skipped.len())?;
            writeln!(out, "SROCC: {}", metric(result.srocc))?;
            writeln!(out, "PLCC:  {}", metric(result.plcc))?;
            writeln!(out, "report: {}", report_path.display())?;
            writeln!(out, "predictions: {}", predictions_path.display())?;
        }
        Format::Structured => {
            serde_json::to_writer(
                &mut *out,
                &MetricsLine {
                    n: result.n,
                    skipped: result.skipped.len(),
                    srocc: result.srocc,
                    plcc: result.plcc,
                    report: &report_path,
                    predictions: &predictions_path,
                },
            )?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    let stats = &run.stats;
    eprintln!(
        "embedding stage: {:.3} s, cache hits {}, misses {}",
        stats.embed_stage.as_secs_f64(),
        stats.cache_hits,
        stats.cache_misses
    );
    Ok(Outcome {
        succeeded: result.n,
        failed: result.skipped.len(),
    })
}

pub fn cmd_evaluate(
    config: &RunConfig,
    manifest: &Path,
    images_dir: &Path,
    columns: &ManifestColumns,
) -> Result<Outcome> {
    let provider = config.provider()?;
    let mut stdout = io::stdout().lock();
    evaluate_with(provider.as_ref(), config, manifest, images_dir, columns, &mut stdout)
}

pub fn cmd_bank(config: &RunConfig) -> Result<Outcome> {
    let mut out = open_output(config.out.as_deref())?;
    match config.format {
        Format::Human => {
            writeln!(out, "# fingerprint {}", config.bank.fingerprint())?;
            writeln!(out, "{}", config.bank.to_json())?;
        }
        Format::Structured => {
            let value = serde_json::json!({
                "fingerprint": config.bank.fingerprint(),
                "bank": config.bank,
            });
            serde_json::to_writer(&mut out, &value)?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(Outcome { succeeded: 1, failed: 0 })
}
