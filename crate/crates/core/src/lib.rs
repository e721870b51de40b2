//! Zero-shot, interpretable no-reference image quality assessment.
//!
//! An image is compared against an ordered bank of antonym prompt pairs
//! ("sharp" / "blurred", "noiseless" / "noisy", ...) in the joint embedding
//! space of a vision-language model. Each pair yields a descriptive score in
//! `(0, 100)` that says how strongly the image leans towards the positive
//! prompt, and the overall quality is the unweighted mean of those scores.
//!
//! The crate is split into:
//!
//! - [`scoring`]: the similarity, softmax and averaging math plus report assembly.
//! - [`bank`]: prompt banks, the built-in banks, bank files and fingerprints.
//! - [`provider`]: the embedding provider interface and the deterministic mock.
//! - [`eval`]: dataset manifests, rank/linear correlation, the embedding cache
//!   and the dataset evaluation driver.

pub mod bank;
pub mod embedding;
pub mod eval;
pub mod provider;
pub mod scoring;

pub use bank::{AntonymPromptPair, BankError, PromptBank};
pub use embedding::{EmbeddingError, EmbeddingVector};
pub use provider::{
    Concurrency, EmbeddingProvider, ImageInput, MockProvider, Normalized, ProviderDescriptor,
    ProviderError,
};
pub use scoring::{
    descriptive_score, overall_quality, score_image, similarity, DescriptiveScore, QualityReport,
    Scorer, ScoringError, SimilarityScore,
};
