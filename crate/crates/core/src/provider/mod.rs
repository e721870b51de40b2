//! Image and text encoders behind a common interface.

mod mock;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingVector};
use crate::scoring::ScoringError;

pub use mock::{fnv1a64, MockProvider, SplitMix64, IMAGE_DOMAIN, TEXT_DOMAIN};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image {id:?} cannot be decoded: {reason}")]
    UndecodableImage { id: String, reason: String },
    #[error("no prompts supplied")]
    NoPrompts,
    #[error("prompt {index}: {message}")]
    Prompt { index: usize, message: String },
    #[error("model produced {got}-dimensional output, descriptor declares {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("failed to load model: {0}")]
    ModelLoad(String),
    #[error("input rejected by model: {0}")]
    InputShape(String),
    #[error("inference failed: {0}")]
    Inference(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Whether a provider may be called from several threads at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    /// Concurrent read-only use is safe.
    Shared,
    /// Callers must serialize calls.
    Exclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub model_id: String,
    pub embedding_dim: usize,
    pub normalizes_output: bool,
}

impl ProviderDescriptor {
    pub fn new(
        model_id: impl Into<String>,
        embedding_dim: usize,
        normalizes_output: bool,
    ) -> Result<Self, ProviderError> {
        let model_id = model_id.into();
        if model_id.trim().is_empty() {
            return Err(ProviderError::ModelLoad("model_id must not be empty".into()));
        }
        if embedding_dim == 0 {
            return Err(ProviderError::ModelLoad("embedding_dim must be positive".into()));
        }
        Ok(Self {
            model_id,
            embedding_dim,
            normalizes_output,
        })
    }
}

/// Raw image file content plus an identifier.
#[derive(Clone)]
pub struct ImageInput {
    id: String,
    bytes: Vec<u8>,
}

impl ImageInput {
    pub fn new(id: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self {
            id: id.into(),
            bytes,
        }
    }

    /// Reads a file; the id is the file name.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ProviderError::Io {
            path: path.to_owned(),
            source,
        })?;
        let id = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Ok(Self { id, bytes })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Sniffs the container format. Only PNG and JPEG are accepted.
    pub fn format(&self) -> Result<ImageFormat, ProviderError> {
        match image::guess_format(&self.bytes) {
            Ok(f @ (ImageFormat::Png | ImageFormat::Jpeg)) => Ok(f),
            Ok(other) => Err(self.undecodable(format!("unsupported format {other:?}"))),
            Err(e) => Err(self.undecodable(e.to_string())),
        }
    }

    pub fn decode(&self) -> Result<DynamicImage, ProviderError> {
        let format = self.format()?;
        image::load_from_memory_with_format(&self.bytes, format)
            .map_err(|e| self.undecodable(e.to_string()))
    }

    fn undecodable(&self, reason: String) -> ProviderError {
        ProviderError::UndecodableImage {
            id: self.id.clone(),
            reason,
        }
    }
}

impl fmt::Debug for ImageInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageInput")
            .field("id", &self.id)
            .field("len", &self.bytes.len())
            .finish()
    }
}

/// Image encoder and text encoder sharing one embedding space.
///
/// Implementations must be referentially transparent: the same input always
/// produces the same vector for a given instance.
pub trait EmbeddingProvider: Send + Sync {
    fn descriptor(&self) -> &ProviderDescriptor;

    fn embed_image(&self, image: &ImageInput) -> Result<EmbeddingVector, ProviderError>;

    /// One vector per prompt, in order.
    fn embed_texts(&self, prompts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Shared
    }

    /// Human-readable description of image preprocessing, if any.
    fn preprocessing(&self) -> Option<String> {
        None
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn descriptor(&self) -> &ProviderDescriptor {
        (**self).descriptor()
    }

    fn embed_image(&self, image: &ImageInput) -> Result<EmbeddingVector, ProviderError> {
        (**self).embed_image(image)
    }

    fn embed_texts(&self, prompts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        (**self).embed_texts(prompts)
    }

    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }

    fn preprocessing(&self) -> Option<String> {
        (**self).preprocessing()
    }
}

/// Checks the common `embed_texts` preconditions.
pub fn validate_prompts(prompts: &[&str]) -> Result<(), ProviderError> {
    if prompts.is_empty() {
        return Err(ProviderError::NoPrompts);
    }
    match prompts.iter().position(|p| p.is_empty()) {
        Some(index) => Err(ProviderError::Prompt {
            index,
            message: "prompt is empty".into(),
        }),
        None => Ok(()),
    }
}

/// Checks a vector against the descriptor's declared dimension.
pub fn check_dim(
    descriptor: &ProviderDescriptor,
    v: &EmbeddingVector,
) -> Result<(), ProviderError> {
    if v.dim() != descriptor.embedding_dim {
        return Err(ProviderError::DimensionMismatch {
            expected: descriptor.embedding_dim,
            got: v.dim(),
        });
    }
    Ok(())
}

/// L2-normalizes every embedding of the wrapped provider.
///
/// The model id gains a `+l2` suffix so cached raw and normalized vectors
/// never mix.
pub struct Normalized<P> {
    inner: P,
    descriptor: ProviderDescriptor,
}

impl<P: EmbeddingProvider> Normalized<P> {
    pub fn new(inner: P) -> Self {
        let base = inner.descriptor();
        let descriptor = if base.normalizes_output {
            base.clone()
        } else {
            ProviderDescriptor {
                model_id: format!("{}+l2", base.model_id),
                embedding_dim: base.embedding_dim,
                normalizes_output: true,
            }
        };
        Self { inner, descriptor }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn normalize(v: EmbeddingVector) -> Result<EmbeddingVector, ProviderError> {
        v.normalized()
            .ok_or_else(|| ProviderError::Inference("cannot normalize a zero embedding".into()))
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for Normalized<P> {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, image: &ImageInput) -> Result<EmbeddingVector, ProviderError> {
        Self::normalize(self.inner.embed_image(image)?)
    }

    fn embed_texts(&self, prompts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.inner
            .embed_texts(prompts)?
            .into_iter()
            .map(Self::normalize)
            .collect()
    }

    fn concurrency(&self) -> Concurrency {
        self.inner.concurrency()
    }

    fn preprocessing(&self) -> Option<String> {
        self.inner.preprocessing()
    }
}
