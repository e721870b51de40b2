//! Persistent embedding cache, one file per entry.
//!
//! Entries are keyed by the SHA-256 of the raw input bytes, the model id and
//! the input domain, so moving files never invalidates the cache and vectors
//! from different models never mix.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! offset  size     field
//! 0       12       magic  b"IQAEMBEDDING"
//! 12      4        format version (u32) = 1
//! 16      4        dim (u32)
//! 20      8*dim    vector entries (f64)
//! 20+8d   4        CRC-32 of bytes [0, 20+8d)
//! ```
//!
//! An entry that fails the length, magic, version or checksum test is
//! treated as absent and overwritten on the next put. Writers go through a
//! temporary file and an atomic rename, so readers never see a partial entry.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::EmbeddingVector;

const MAGIC: &[u8; 12] = b"IQAEMBEDDING";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;
const EXTENSION: &str = "emb";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("embedding of dimension {0} does not fit the cache format")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Image,
    Text,
}

impl Domain {
    fn tag(self) -> u8 {
        match self {
            Domain::Image => 0x01,
            Domain::Text => 0x02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub content_digest: [u8; 32],
    pub model_id: String,
    pub domain: Domain,
}

impl CacheKey {
    pub fn new(content: &[u8], model_id: impl Into<String>, domain: Domain) -> Self {
        Self {
            content_digest: Sha256::digest(content).into(),
            model_id: model_id.into(),
            domain,
        }
    }

    /// Hex digest over all key components; used as the entry file stem.
    pub fn hex_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.content_digest);
        h.update((self.model_id.len() as u64).to_le_bytes());
        h.update(self.model_id.as_bytes());
        h.update([self.domain.tag()]);
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub vector: EmbeddingVector,
    pub created_at: SystemTime,
}

/// Counters for one cache instance.
#[derive(Debug, Default)]
pub struct CacheStats {
    pub hits: AtomicU64,
    pub misses: AtomicU64,
    pub corrupt: AtomicU64,
    pub writes: AtomicU64,
}

impl CacheStats {
    pub fn snapshot(&self) -> (u64, u64, u64, u64) {
        (
            self.hits.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
            self.corrupt.load(Ordering::Relaxed),
            self.writes.load(Ordering::Relaxed),
        )
    }
}

#[derive(Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
    stats: CacheStats,
}

impl EmbeddingCache {
    /// Opens (and creates if needed) a cache directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| CacheError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            dir,
            stats: CacheStats::default(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.{EXTENSION}", key.hex_digest()))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<EmbeddingVector>, CacheError> {
        Ok(self.entry(key)?.map(|e| e.vector))
    }

    pub fn entry(&self, key: &CacheKey) -> Result<Option<CacheEntry>, CacheError> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                self.stats.misses.fetch_add(1, Ordering::Relaxed);
                return Ok(None);
            }
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        match decode_entry(&bytes) {
            Some(vector) => {
                self.stats.hits.fetch_add(1, Ordering::Relaxed);
                let created_at = fs::metadata(&path)
                    .and_then(|m| m.modified())
                    .unwrap_or(SystemTime::UNIX_EPOCH);
                Ok(Some(CacheEntry {
                    key: key.clone(),
                    vector,
                    created_at,
                }))
            }
            None => {
                self.stats.corrupt.fetch_add(1, Ordering::Relaxed);
                self.stats.misses.fetch_add(1, Ordering::Relaxed);
                Ok(None)
            }
        }
    }

    /// Stores `vector` under `key`. A valid identical entry is left untouched.
    pub fn put(&self, key: &CacheKey, vector: &EmbeddingVector) -> Result<(), CacheError> {
        let path = self.path_for(key);
        let encoded = encode_entry(vector)?;
        if let Ok(existing) = fs::read(&path) {
            if existing == encoded {
                return Ok(());
            }
        }
        let io_err = |source| CacheError::Io {
            path: path.clone(),
            source,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err)?;
        tmp.write_all(&encoded).map_err(io_err)?;
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        self.stats.writes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }
}

pub fn encode_entry(vector: &EmbeddingVector) -> Result<Vec<u8>, CacheError> {
    let dim = u32::try_from(vector.dim()).map_err(|_| CacheError::TooLarge(vector.dim()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * vector.dim() + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    for v in vector.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

/// Parses an entry, returning `None` for anything malformed.
pub fn decode_entry(bytes: &[u8]) -> Option<EmbeddingVector> {
    if bytes.len() < HEADER_LEN + 4 {
        return None;
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().ok()?) {
        return None;
    }
    if &body[..12] != MAGIC || u32::from_le_bytes(body[12..16].try_into().ok()?) != VERSION {
        return None;
    }
    let dim = u32::from_le_bytes(body[16..20].try_into().ok()?) as usize;
    let payload = &body[HEADER_LEN..];
    if payload.len() != dim.checked_mul(8)? {
        return None;
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    EmbeddingVector::new(values).ok()
}
