//! Dataset evaluation: score every image of a manifest and correlate the
//! predicted quality with the ground-truth MOS.

pub mod cache;
pub mod manifest;
pub mod metrics;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::PromptBank;
use crate::embedding::EmbeddingVector;
use crate::provider::{Concurrency, EmbeddingProvider, ImageInput, ProviderError};
use crate::scoring::{pair_up, Scorer};

pub use cache::{CacheEntry, CacheError, CacheKey, Domain, EmbeddingCache};
pub use manifest::{load_manifest, DatasetRecord, Manifest, ManifestColumns, ManifestError};
pub use metrics::{fractional_ranks, plcc, srocc, MetricError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to evaluate")]
    NoRecords,
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("prompt embedding failed: {0}")]
    Prompts(#[source] ProviderError),
    #[error("none of the {total} images could be scored ({summary})")]
    NothingScored { total: usize, summary: String },
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("failed to start worker pool: {0}")]
    Pool(String),
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub mos: f64,
    pub q: f64,
    /// Descriptive scores in bank order.
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub image_id: String,
    /// Short category such as `unreadable` or `undecodable`.
    pub kind: String,
    pub reason: String,
}

/// Configuration that produced a result; recorded alongside the metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub model_id: String,
    pub embedding_dim: usize,
    pub normalizes_output: bool,
    pub preprocessing: Option<String>,
    pub bank_name: String,
    pub bank_fingerprint: String,
    pub feature_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub n: usize,
    /// `None` when undefined (fewer than two predictions or a constant input).
    pub srocc: Option<f64>,
    pub plcc: Option<f64>,
    pub predictions: Vec<Prediction>,
    pub skipped: Vec<Skipped>,
    pub run: RunInfo,
}

/// Timing and cache counters; not part of the deterministic result.
#[derive(Debug, Clone, Default)]
pub struct EvalStats {
    pub embed_stage: Duration,
    pub cache_hits: usize,
    pub cache_misses: usize,
    pub cache_write_failures: usize,
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub result: EvalResult,
    pub stats: EvalStats,
}

enum Lookup {
    Hit(EmbeddingVector),
    Miss(Option<CacheKey>),
}

fn lookup(
    cache: Option<&EmbeddingCache>,
    content: &[u8],
    model_id: &str,
    domain: Domain,
) -> Result<Lookup, CacheError> {
    let Some(cache) = cache else {
        return Ok(Lookup::Miss(None));
    };
    let key = CacheKey::new(content, model_id, domain);
    Ok(match cache.get(&key)? {
        Some(v) => Lookup::Hit(v),
        None => Lookup::Miss(Some(key)),
    })
}

/// Embeds prompts, consulting the cache first. Misses are embedded in one
/// provider call.
pub fn embed_prompts_cached(
    provider: &dyn EmbeddingProvider,
    prompts: &[&str],
    cache: Option<&EmbeddingCache>,
) -> Result<Vec<EmbeddingVector>, EvalError> {
    let model_id = provider.descriptor().model_id.clone();
    let mut out: Vec<Option<EmbeddingVector>> = Vec::with_capacity(prompts.len());
    let mut missing = Vec::new();
    for (i, prompt) in prompts.iter().enumerate() {
        match lookup(cache, prompt.as_bytes(), &model_id, Domain::Text)? {
            Lookup::Hit(v) if v.dim() == provider.descriptor().embedding_dim => out.push(Some(v)),
            Lookup::Hit(_) | Lookup::Miss(_) => {
                out.push(None);
                missing.push(i);
            }
        }
    }
    if !missing.is_empty() {
        let texts: Vec<&str> = missing.iter().map(|&i| prompts[i]).collect();
        let fresh = provider.embed_texts(&texts).map_err(EvalError::Prompts)?;
        for (&i, v) in missing.iter().zip(fresh) {
            if let Some(cache) = cache {
                // a failed write only costs a recomputation next time
                let _ = cache.put(
                    &CacheKey::new(prompts[i].as_bytes(), model_id.clone(), Domain::Text),
                    &v,
                );
            }
            out[i] = Some(v);
        }
    }
    Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
}

/// Builds a [`Scorer`] whose prompt embeddings come through the cache.
pub fn cached_scorer(
    provider: &dyn EmbeddingProvider,
    bank: &PromptBank,
    cache: Option<&EmbeddingCache>,
) -> Result<Scorer, EvalError> {
    let embs = embed_prompts_cached(provider, &bank.prompts(), cache)?;
    let pairs = pair_up(embs, bank.len()).map_err(EvalError::Prompts)?;
    Scorer::new(bank.clone(), pairs, provider.descriptor().model_id.clone())
        .map_err(|e| EvalError::Prompts(e.into()))
}

struct ImageOutcome {
    result: Result<Prediction, (&'static str, String)>,
    cache_hit: bool,
    write_failed: bool,
}

fn score_record(
    provider: &dyn EmbeddingProvider,
    gate: Option<&Mutex<()>>,
    scorer: &Scorer,
    cache: Option<&EmbeddingCache>,
    record: &DatasetRecord,
) -> ImageOutcome {
    let mut outcome = ImageOutcome {
        result: Err(("", String::new())),
        cache_hit: false,
        write_failed: false,
    };
    let bytes = match fs::read(&record.image_path) {
        Ok(b) => b,
        Err(e) => {
            outcome.result = Err((
                "unreadable",
                format!("cannot read {}: {e}", record.image_path.display()),
            ));
            return outcome;
        }
    };
    let model_id = scorer.model_id();
    let emb = match lookup(cache, &bytes, model_id, Domain::Image) {
        Ok(Lookup::Hit(v)) => {
            outcome.cache_hit = true;
            Ok(v)
        }
        Ok(Lookup::Miss(key)) => {
            let input = ImageInput::new(record.image_id.clone(), bytes);
            let embedded = match gate {
                Some(lock) => {
                    let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
                    provider.embed_image(&input)
                }
                None => provider.embed_image(&input),
            };
            if let (Ok(v), Some(key), Some(cache)) = (&embedded, &key, cache) {
                outcome.write_failed = cache.put(key, v).is_err();
            }
            embedded.map_err(|e| (provider_error_kind(&e), e.to_string()))
        }
        Err(e) => Err(("cache error", e.to_string())),
    };
    outcome.result = emb.and_then(|emb| {
        scorer
            .score_embedding(&record.image_id, &emb)
            .map(|report| Prediction {
                image_id: record.image_id.clone(),
                mos: record.mos,
                q: report.overall,
                d: report.per_feature.iter().map(|d| d.value).collect(),
            })
            .map_err(|e| ("scoring failed", e.to_string()))
    });
    outcome
}

/// Scores every record and correlates `q` with MOS.
///
/// Images are processed on `options.workers` threads; results are gathered
/// in manifest order, so the outcome does not depend on the worker count.
/// Images that cannot be read, decoded or scored are listed in
/// [`EvalResult::skipped`] and excluded from the correlations.
pub fn evaluate(
    provider: &dyn EmbeddingProvider,
    bank: &PromptBank,
    records: &[DatasetRecord],
    cache: Option<&EmbeddingCache>,
    options: &EvalOptions,
) -> Result<EvalRun, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    if options.workers == 0 {
        return Err(EvalError::NoWorkers);
    }
    let scorer = cached_scorer(provider, bank, cache)?;
    let gate = match provider.concurrency() {
        Concurrency::Shared => None,
        Concurrency::Exclusive => Some(Mutex::new(())),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let started = Instant::now();
    let outcomes: Vec<ImageOutcome> = pool.install(|| {
        records
            .par_iter()
            .map(|r| score_record(provider, gate.as_ref(), &scorer, cache, r))
            .collect()
    });
    let embed_stage = started.elapsed();

    let mut stats = EvalStats {
        embed_stage,
        ..EvalStats::default()
    };
    let mut predictions = Vec::new();
    let mut skipped = Vec::new();
    for (record, outcome) in records.iter().zip(outcomes) {
        if outcome.cache_hit {
            stats.cache_hits += 1;
        } else if cache.is_some() {
            stats.cache_misses += 1;
        }
        stats.cache_write_failures += usize::from(outcome.write_failed);
        match outcome.result {
            Ok(p) => predictions.push(p),
            Err((kind, reason)) => skipped.push(Skipped {
                image_id: record.image_id.clone(),
                kind: kind.to_owned(),
                reason,
            }),
        }
    }
    if predictions.is_empty() {
        return Err(EvalError::NothingScored {
            total: records.len(),
            summary: summarize_skips(&skipped),
        });
    }

    let q: Vec<f64> = predictions.iter().map(|p| p.q).collect();
    let mos: Vec<f64> = predictions.iter().map(|p| p.mos).collect();
    let descriptor = provider.descriptor();
    let result = EvalResult {
        n: predictions.len(),
        srocc: srocc(&q, &mos).ok().flatten(),
        plcc: plcc(&q, &mos).ok().flatten(),
        predictions,
        skipped,
        run: RunInfo {
            model_id: descriptor.model_id.clone(),
            embedding_dim: descriptor.embedding_dim,
            normalizes_output: descriptor.normalizes_output,
            preprocessing: provider.preprocessing(),
            bank_name: bank.name().to_owned(),
            bank_fingerprint: scorer.fingerprint().to_owned(),
            feature_labels: bank.labels().into_iter().map(str::to_owned).collect(),
        },
    };
    Ok(EvalRun { result, stats })
}

fn provider_error_kind(e: &ProviderError) -> &'static str {
    match e {
        ProviderError::Io { .. } => "unreadable",
        ProviderError::UndecodableImage { .. } => "undecodable",
        ProviderError::InputShape(_) => "rejected by model",
        ProviderError::ModelLoad(_) | ProviderError::Inference(_) => "inference failed",
        ProviderError::DimensionMismatch { .. } | ProviderError::Embedding(_) => "bad embedding",
        _ => "scoring failed",
    }
}

/// Counts skips per kind with the first reason of each as an example, e.g.
/// `"3x unreadable (cannot read a.png: ...); 1x undecodable (...)"`.
pub fn summarize_skips(skipped: &[Skipped]) -> String {
    let mut counts: Vec<(&str, &str, usize)> = Vec::new();
    for s in skipped {
        match counts.iter_mut().find(|(k, _, _)| *k == s.kind) {
            Some((_, _, c)) => *c += 1,
            None => counts.push((&s.kind, &s.reason, 1)),
        }
    }
    counts
        .iter()
        .map(|(k, example, c)| format!("{c}x {k} (e.g. {example})"))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Serialize)]
struct Metrics<'a> {
    n: usize,
    srocc: Option<f64>,
    plcc: Option<f64>,
    skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'a str>,
}

#[derive(Serialize)]
struct Report<'a> {
    metrics: Metrics<'a>,
    run: &'a RunInfo,
    predictions: &'a [Prediction],
    skipped: &'a [Skipped],
}

impl EvalResult {
    /// Metrics block plus per-image table, as pretty JSON.
    pub fn report_json(&self) -> String {
        let note = (self.srocc.is_none() || self.plcc.is_none())
            .then_some("a correlation is undefined (fewer than two predictions or constant input)");
        let report = Report {
            metrics: Metrics {
                n: self.n,
                srocc: self.srocc,
                plcc: self.plcc,
                skipped: self.skipped.len(),
                note,
            },
            run: &self.run,
            predictions: &self.predictions,
            skipped: &self.skipped,
        };
        let mut out = serde_json::to_string_pretty(&report).expect("report serializes");
        out.push('\n');
        out
    }

    /// Flat CSV: `image_id,mos,q,<label>...`, full precision.
    pub fn predictions_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["image_id".to_owned(), "mos".into(), "q".into()];
        header.extend(self.run.feature_labels.iter().cloned());
        wtr.write_record(&header).expect("in-memory write");
        for p in &self.predictions {
            let mut row = vec![p.image_id.clone(), p.mos.to_string(), p.q.to_string()];
            row.extend(p.d.iter().map(f64::to_string));
            wtr.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn write_files(&self, report: &Path, predictions: &Path) -> Result<(), EvalError> {
        for (path, text) in [(report, self.report_json()), (predictions, self.predictions_csv())] {
            fs::write(path, text).map_err(|source| EvalError::Write {
                path: path.to_owned(),
                source,
            })?;
        }
        Ok(())
    }
}
