//! Antonym prompt banks.
//!
//! A bank is an ordered list of `(feature_label, positive_text, negative_text)`
//! triples. Order matters: it fixes the column order of every report and
//! is part of the fingerprint.
//!
//! Bank files are JSON:
//!
//! ```json
//! {
//!   "name": "custom",
//!   "pairs": [
//!     {"feature_label": "sharpness",
//!      "positive_text": "This is a good photo because it is sharp.",
//!      "negative_text": "This is a bad photo because it is blurred."}
//!   ]
//! }
//! ```
//!
//! Unknown keys are rejected.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_BANK_NAME: &str = "default";
pub const CLIPIQA_BANK_NAME: &str = "clip-iqa";

#[derive(Debug, Error)]
pub enum BankError {
    #[error("failed to read bank file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bank file is not valid JSON: {0}")]
    Parse(#[source] serde_json::Error),
    #[error("bank document: {0}")]
    Document(String),
    #[error("pair {index}: {message}")]
    InvalidPair { index: usize, message: String },
    #[error("pair {index}: duplicate feature_label {label:?}")]
    DuplicateLabel { index: usize, label: String },
    #[error("bank {0:?} has no pairs")]
    Empty(String),
    #[error("bank name must not be empty")]
    EmptyName,
    #[error("unknown built-in bank {0:?} (expected `default` or `clip-iqa`)")]
    UnknownBuiltin(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntonymPromptPair {
    pub feature_label: String,
    pub positive_text: String,
    pub negative_text: String,
}

impl AntonymPromptPair {
    pub fn new(
        feature_label: impl Into<String>,
        positive_text: impl Into<String>,
        negative_text: impl Into<String>,
    ) -> Self {
        Self {
            feature_label: feature_label.into(),
            positive_text: positive_text.into(),
            negative_text: negative_text.into(),
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.feature_label.trim().is_empty() {
            return Err("feature_label is empty".into());
        }
        if self.positive_text.trim().is_empty() {
            return Err("positive_text is empty".into());
        }
        if self.negative_text.trim().is_empty() {
            return Err("negative_text is empty".into());
        }
        if self.positive_text == self.negative_text {
            return Err("positive_text and negative_text are identical".into());
        }
        Ok(())
    }
}

/// A validated, immutable, ordered collection of antonym prompt pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBank {
    name: String,
    pairs: Vec<AntonymPromptPair>,
}

impl PromptBank {
    pub fn new(name: impl Into<String>, pairs: Vec<AntonymPromptPair>) -> Result<Self, BankError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(BankError::EmptyName);
        }
        if pairs.is_empty() {
            return Err(BankError::Empty(name));
        }
        let mut seen = HashSet::new();
        for (index, pair) in pairs.iter().enumerate() {
            pair.check()
                .map_err(|message| BankError::InvalidPair { index, message })?;
            if !seen.insert(pair.feature_label.as_str()) {
                return Err(BankError::DuplicateLabel {
                    index,
                    label: pair.feature_label.clone(),
                });
            }
        }
        Ok(Self { name, pairs })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pairs(&self) -> &[AntonymPromptPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.pairs.iter().map(|p| p.feature_label.as_str()).collect()
    }

    /// All prompt texts flattened as `[pos_0, neg_0, pos_1, neg_1, ...]`.
    pub fn prompts(&self) -> Vec<&str> {
        self.pairs
            .iter()
            .flat_map(|p| [p.positive_text.as_str(), p.negative_text.as_str()])
            .collect()
    }

    /// SHA-256 over the name and every label and text in order, as hex.
    ///
    /// Every field is length-prefixed so no two distinct banks share an
    /// encoding.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let mut field = |s: &str| {
            hasher.update((s.len() as u64).to_le_bytes());
            hasher.update(s.as_bytes());
        };
        field(&self.name);
        for p in &self.pairs {
            field(&p.feature_label);
            field(&p.positive_text);
            field(&p.negative_text);
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bank serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, BankError> {
        let doc: serde_json::Value = serde_json::from_str(text).map_err(BankError::Parse)?;
        let serde_json::Value::Object(mut obj) = doc else {
            return Err(BankError::Document("top level must be an object".into()));
        };
        let name = match obj.remove("name") {
            Some(serde_json::Value::String(s)) => s,
            Some(_) => return Err(BankError::Document("`name` must be a string".into())),
            None => return Err(BankError::Document("missing field `name`".into())),
        };
        let raw_pairs = match obj.remove("pairs") {
            Some(serde_json::Value::Array(a)) => a,
            Some(_) => return Err(BankError::Document("`pairs` must be an array".into())),
            None => return Err(BankError::Document("missing field `pairs`".into())),
        };
        if let Some(key) = obj.keys().next() {
            return Err(BankError::Document(format!("unknown field `{key}`")));
        }
        let pairs = raw_pairs
            .into_iter()
            .enumerate()
            .map(|(index, raw)| {
                serde_json::from_value::<AntonymPromptPair>(raw).map_err(|e| {
                    BankError::InvalidPair {
                        index,
                        message: e.to_string(),
                    }
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(name, pairs)
    }
}

/// Three pairs covering sharpness, noise and brightness.
pub fn default_bank() -> PromptBank {
    PromptBank::new(
        DEFAULT_BANK_NAME,
        vec![
            AntonymPromptPair::new(
                "sharpness",
                "This is a good photo because it is sharp.",
                "This is a bad photo because it is blurred.",
            ),
            AntonymPromptPair::new(
                "noise",
                "This is a good photo because it is noiseless.",
                "This is a bad photo because it has noise.",
            ),
            AntonymPromptPair::new(
                "brightness",
                "This is a good photo because it is light.",
                "This is a bad photo because it is dark.",
            ),
        ],
    )
    .expect("built-in bank is valid")
}

/// The single good/bad pair. With it the overall score is the one pair's score.
pub fn clipiqa_bank() -> PromptBank {
    PromptBank::new(
        CLIPIQA_BANK_NAME,
        vec![AntonymPromptPair::new("quality", "Good photo.", "Bad photo.")],
    )
    .expect("built-in bank is valid")
}

pub fn builtin_bank(name: &str) -> Result<PromptBank, BankError> {
    match name {
        DEFAULT_BANK_NAME => Ok(default_bank()),
        CLIPIQA_BANK_NAME => Ok(clipiqa_bank()),
        other => Err(BankError::UnknownBuiltin(other.to_owned())),
    }
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<PromptBank, BankError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| BankError::Io {
        path: path.to_owned(),
        source,
    })?;
    PromptBank::from_json(&text)
}

pub fn save_bank(bank: &PromptBank, path: impl AsRef<Path>) -> Result<(), BankError> {
    let path = path.as_ref();
    fs::write(path, bank.to_json()).map_err(|source| BankError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Resolves a built-in bank name, falling back to a bank file path.
/// Anything that looks like a path is loaded as a file.
pub fn resolve_bank(name_or_path: &str) -> Result<PromptBank, BankError> {
    match builtin_bank(name_or_path) {
        Ok(bank) => Ok(bank),
        Err(BankError::UnknownBuiltin(_))
            if Path::new(name_or_path).exists()
                || name_or_path.ends_with(".json")
                || name_or_path.contains(std::path::MAIN_SEPARATOR) =>
        {
            load_bank(name_or_path)
        }
        Err(e) => Err(e),
    }
}
