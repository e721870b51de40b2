//! Similarity, descriptive scores and overall quality.
//!
//! For an image embedding `x` and a prompt embedding `t` the similarity is
//!
//! ```text
//! s = x·t / (‖x‖² + ‖t‖²) × 100
//! ```
//!
//! Note the denominator is the sum of squared norms, not the product of
//! norms: for unit vectors this is half the cosine similarity scaled by 100,
//! and unlike cosine similarity it is not invariant to rescaling the inputs.
//! Each antonym pair turns its two similarities into a two-way softmax
//! probability (×100), and the overall score is the plain mean over pairs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bank::PromptBank;
use crate::embedding::EmbeddingVector;
use crate::provider::{EmbeddingProvider, ImageInput, ProviderError};

/// Largest `f64` strictly below 100.
const BELOW_HUNDRED: f64 = 99.999_999_999_999_99;
/// Smallest positive `f64`.
const ABOVE_ZERO: f64 = 5e-324;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("dimension mismatch: image embedding has {image} entries, text embedding has {text}")]
    DimensionMismatch { image: usize, text: usize },
    #[error("similarity undefined: both embeddings are zero vectors")]
    ZeroVectors,
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("cannot average an empty list of descriptive scores")]
    EmptyScores,
    #[error("bank has {bank} pairs but {embeddings} text embedding pairs were supplied")]
    PairCountMismatch { bank: usize, embeddings: usize },
    #[error("pair {index} ({label}): {source}")]
    Pair {
        index: usize,
        label: String,
        #[source]
        source: Box<ScoringError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(pub f64);

impl SimilarityScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Softmax probability (×100) that an image matches the positive prompt of
/// one antonym pair. Always strictly inside `(0, 100)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveScore {
    pub feature_label: String,
    pub value: f64,
}

/// Per-image scoring output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub image_id: String,
    /// One entry per bank pair, in bank order.
    pub per_feature: Vec<DescriptiveScore>,
    pub overall: f64,
    pub bank_fingerprint: String,
    pub model_id: String,
}

impl QualityReport {
    pub fn feature(&self, label: &str) -> Option<f64> {
        self.per_feature
            .iter()
            .find(|d| d.feature_label == label)
            .map(|d| d.value)
    }
}

/// Image/text similarity with the sum-of-squared-norms denominator, ×100.
///
/// No normalization is applied here. Fails on a dimension mismatch or when
/// both inputs are zero vectors.
pub fn similarity(
    image_emb: &EmbeddingVector,
    text_emb: &EmbeddingVector,
) -> Result<SimilarityScore, ScoringError> {
    if image_emb.dim() != text_emb.dim() {
        return Err(ScoringError::DimensionMismatch {
            image: image_emb.dim(),
            text: text_emb.dim(),
        });
    }
    let denom = image_emb.squared_norm() + text_emb.squared_norm();
    if denom == 0.0 {
        return Err(ScoringError::ZeroVectors);
    }
    let s = image_emb.dot(text_emb) / denom * 100.0;
    if !s.is_finite() {
        return Err(ScoringError::NonFinite { what: "similarity" });
    }
    Ok(SimilarityScore(s))
}

/// Two-way softmax of `(s_pos, s_neg)`, ×100, in logistic form.
///
/// Values that saturate to 0 or 100 in floating point are pulled back to
/// the nearest representable value inside the open interval.
pub fn descriptive_score(
    s_pos: SimilarityScore,
    s_neg: SimilarityScore,
    feature_label: &str,
) -> Result<DescriptiveScore, ScoringError> {
    if !s_pos.0.is_finite() || !s_neg.0.is_finite() {
        return Err(ScoringError::NonFinite {
            what: "similarity score",
        });
    }
    let diff = s_neg.0 - s_pos.0;
    if !diff.is_finite() {
        return Err(ScoringError::NonFinite {
            what: "similarity difference",
        });
    }
    // Only ever exponentiate a non-positive number.
    let value = if diff > 0.0 {
        let e = (-diff).exp();
        100.0 * e / (1.0 + e)
    } else {
        100.0 / (1.0 + diff.exp())
    };
    Ok(DescriptiveScore {
        feature_label: feature_label.to_owned(),
        value: value.clamp(ABOVE_ZERO, BELOW_HUNDRED),
    })
}

/// Arithmetic mean of the descriptive scores, summed left to right.
pub fn overall_quality(scores: &[DescriptiveScore]) -> Result<f64, ScoringError> {
    if scores.is_empty() {
        return Err(ScoringError::EmptyScores);
    }
    let sum = scores.iter().fold(0.0, |acc, d| acc + d.value);
    Ok(sum / scores.len() as f64)
}

/// Scores one image embedding against every pair of `bank`.
///
/// `text_embs[i]` holds the (positive, negative) prompt embeddings of pair `i`.
pub fn score_image(
    image_id: &str,
    image_emb: &EmbeddingVector,
    bank: &PromptBank,
    text_embs: &[(EmbeddingVector, EmbeddingVector)],
    model_id: &str,
) -> Result<QualityReport, ScoringError> {
    if text_embs.len() != bank.len() {
        return Err(ScoringError::PairCountMismatch {
            bank: bank.len(),
            embeddings: text_embs.len(),
        });
    }
    let per_feature = bank
        .pairs()
        .iter()
        .zip(text_embs)
        .enumerate()
        .map(|(index, (pair, (pos, neg)))| {
            let annotate = |source| ScoringError::Pair {
                index,
                label: pair.feature_label.clone(),
                source: Box::new(source),
            };
            let s_pos = similarity(image_emb, pos).map_err(annotate)?;
            let s_neg = similarity(image_emb, neg).map_err(annotate)?;
            descriptive_score(s_pos, s_neg, &pair.feature_label).map_err(annotate)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let overall = overall_quality(&per_feature)?;
    Ok(QualityReport {
        image_id: image_id.to_owned(),
        per_feature,
        overall,
        bank_fingerprint: bank.fingerprint(),
        model_id: model_id.to_owned(),
    })
}

/// A bank with its prompt embeddings already computed for one model.
///
/// Prompt embeddings are computed once and reused for every image.
#[derive(Debug, Clone)]
pub struct Scorer {
    bank: PromptBank,
    fingerprint: String,
    model_id: String,
    text_embs: Vec<(EmbeddingVector, EmbeddingVector)>,
}

impl Scorer {
    pub fn new(
        bank: PromptBank,
        text_embs: Vec<(EmbeddingVector, EmbeddingVector)>,
        model_id: impl Into<String>,
    ) -> Result<Self, ScoringError> {
        if text_embs.len() != bank.len() {
            return Err(ScoringError::PairCountMismatch {
                bank: bank.len(),
                embeddings: text_embs.len(),
            });
        }
        Ok(Self {
            fingerprint: bank.fingerprint(),
            bank,
            model_id: model_id.into(),
            text_embs,
        })
    }

    /// Embeds all prompts of `bank` with `provider` in a single call.
    pub fn from_provider(
        provider: &dyn EmbeddingProvider,
        bank: PromptBank,
    ) -> Result<Self, ProviderError> {
        let prompts = bank.prompts();
        let embs = provider.embed_texts(&prompts)?;
        let text_embs = pair_up(embs, bank.len())?;
        let model_id = provider.descriptor().model_id.clone();
        Scorer::new(bank, text_embs, model_id).map_err(ProviderError::from)
    }

    pub fn bank(&self) -> &PromptBank {
        &self.bank
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn text_embeddings(&self) -> &[(EmbeddingVector, EmbeddingVector)] {
        &self.text_embs
    }

    pub fn score_embedding(
        &self,
        image_id: &str,
        image_emb: &EmbeddingVector,
    ) -> Result<QualityReport, ScoringError> {
        let mut report = score_image(
            image_id,
            image_emb,
            &self.bank,
            &self.text_embs,
            &self.model_id,
        )?;
        report.bank_fingerprint.clone_from(&self.fingerprint);
        Ok(report)
    }

    pub fn score(
        &self,
        provider: &dyn EmbeddingProvider,
        image: &ImageInput,
    ) -> Result<QualityReport, ProviderError> {
        let emb = provider.embed_image(image)?;
        Ok(self.score_embedding(image.id(), &emb)?)
    }
}

/// Groups a flat `[pos_0, neg_0, pos_1, neg_1, ...]` list into pairs.
pub(crate) fn pair_up(
    embs: Vec<EmbeddingVector>,
    pairs: usize,
) -> Result<Vec<(EmbeddingVector, EmbeddingVector)>, ProviderError> {
    if embs.len() != pairs * 2 {
        return Err(ProviderError::Inference(format!(
            "expected {} prompt embeddings, got {}",
            pairs * 2,
            embs.len()
        )));
    }
    let mut it = embs.into_iter();
    let mut out = Vec::with_capacity(pairs);
    while let (Some(pos), Some(neg)) = (it.next(), it.next()) {
        out.push((pos, neg));
    }
    Ok(out)
}
