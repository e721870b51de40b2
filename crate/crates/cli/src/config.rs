//! Command-line arguments and the provider they select.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use iqa_core::eval::EmbeddingCache;
use iqa_core::provider::Normalized;
use iqa_core::{EmbeddingProvider, MockProvider, PromptBank};
use iqa_neural::{NeuralConfig, NeuralProvider, PreprocessPolicy};

pub const DEFAULT_THRESHOLD: f64 = 25.0;
/// Embedding width of the mock backend, matching ResNet-50 CLIP.
pub const MOCK_DIM: usize = 1024;

#[derive(Debug, Parser)]
#[command(name = "iqa", version, about = "Zero-shot image quality scores from antonym prompt pairs")]
pub struct Cli {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score images and emit one report per image.
    Score {
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score one image and list its features from weakest to strongest.
    Explain { image: PathBuf },
    /// Score a dataset manifest and correlate predictions with MOS.
    Evaluate {
        /// CSV with an image-name column and a MOS column.
        manifest: PathBuf,
        /// Directory the manifest's image names are relative to.
        images_dir: PathBuf,
        #[arg(long, default_value = "image_name")]
        id_column: String,
        #[arg(long, default_value = "MOS")]
        mos_column: String,
    },
    /// Print the selected prompt bank as JSON.
    Bank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    /// Deterministic pseudo-random embeddings; no model files needed.
    Mock,
    /// CLIP encoders exported to ONNX.
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    /// One JSON object per line.
    Structured,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value_t = Backend::Mock, global = true)]
    pub backend: Backend,
    /// Exported image encoder (.onnx).
    #[arg(long, global = true)]
    pub image_model: Option<PathBuf>,
    /// Exported text encoder (.onnx).
    #[arg(long, global = true)]
    pub text_model: Option<PathBuf>,
    /// CLIP BPE merge list (bpe_simple_vocab_16e6.txt or .txt.gz).
    #[arg(long, global = true)]
    pub tokenizer: Option<PathBuf>,
    /// Built-in bank name (`default`, `clip-iqa`) or a bank JSON file.
    #[arg(long, default_value = "default", global = true)]
    pub bank: String,
    /// Persistent embedding cache; disabled when unset.
    #[arg(long, env = "IQA_CACHE_DIR", global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1, global = true)]
    pub workers: usize,
    /// L2-normalize embeddings before scoring.
    #[arg(long, global = true)]
    pub normalize_embeddings: bool,
    /// `native` or `resize:S`. Defaults to what the image encoder accepts.
    #[arg(long, global = true)]
    pub preprocess: Option<PreprocessPolicy>,
    #[arg(long, value_enum, default_value_t = Format::Human, global = true)]
    pub format: Format,
    /// Output file for `score`/`explain`, output directory for `evaluate`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Mock backend seed.
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    /// `explain` flags features scoring below this value.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, global = true)]
    pub threshold: f64,
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub backend: Backend,
    pub neural: Option<NeuralConfig>,
    pub bank: PromptBank,
    pub cache_dir: Option<PathBuf>,
    pub workers: usize,
    pub normalize: bool,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub threshold: f64,
}

impl RunConfig {
    pub fn from_args(args: &RunArgs) -> Result<Self> {
        if args.workers == 0 {
            bail!("--workers must be at least 1");
        }
        if !args.threshold.is_finite() {
            bail!("--threshold must be a finite number");
        }
        let neural = match args.backend {
            Backend::Mock => {
                if args.preprocess.is_some() {
                    bail!("--preprocess only applies to the neural backend");
                }
                None
            }
            Backend::Neural => {
                let (Some(image_model), Some(text_model), Some(vocab)) =
                    (&args.image_model, &args.text_model, &args.tokenizer)
                else {
                    bail!("--backend neural requires --image-model, --text-model and --tokenizer");
                };
                Some(NeuralConfig {
                    image_model: image_model.clone(),
                    text_model: text_model.clone(),
                    vocab: vocab.clone(),
                    preprocess: args.preprocess,
                })
            }
        };
        let bank = iqa_core::bank::resolve_bank(&args.bank)
            .with_context(|| format!("cannot use bank {:?}", args.bank))?;
        Ok(Self {
            backend: args.backend,
            neural,
            bank,
            cache_dir: args.cache_dir.clone(),
            workers: args.workers,
            normalize: args.normalize_embeddings,
            format: args.format,
            out: args.out.clone(),
            seed: args.seed,
            threshold: args.threshold,
        })
    }

    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let base: Box<dyn EmbeddingProvider> = match &self.neural {
            None => Box::new(MockProvider::new(self.seed, MOCK_DIM)),
            Some(cfg) => Box::new(NeuralProvider::load(cfg).context("cannot load the neural backend")?),
        };
        Ok(if self.normalize {
            Box::new(Normalized::new(base))
        } else {
            base
        })
    }

    pub fn cache(&self) -> Result<Option<EmbeddingCache>> {
        self.cache_dir
            .as_ref()
            .map(|dir| {
                EmbeddingCache::open(dir)
                    .with_context(|| format!("cannot open cache directory {}", dir.display()))
            })
            .transpose()
    }
}
