//! Weight-free deterministic provider.
//!
//! The embedding of an input is a pure function of `(seed, domain, bytes)`:
//!
//! 1. `s0 = fnv1a64(domain_byte ‖ bytes) ^ seed`
//! 2. a SplitMix64 stream seeded with `s0` yields `dim` values mapped to
//!    `[-1, 1)` via `(u >> 11) * 2^-53 * 2 - 1`
//! 3. the vector is L2-normalized.
//!
//! Only integer ops and IEEE-754 `+ * / sqrt` are involved, so the output is
//! bit-identical on every platform.

use crate::embedding::EmbeddingVector;

use super::{
    validate_prompts, EmbeddingProvider, ImageInput, ProviderDescriptor, ProviderError,
};

pub const IMAGE_DOMAIN: u8 = 0x01;
pub const TEXT_DOMAIN: u8 = 0x02;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(chunks: &[&[u8]]) -> u64 {
    chunks
        .iter()
        .flat_map(|c| c.iter())
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[-1, 1)` with 53 bits of resolution.
    pub fn next_signed_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    descriptor: ProviderDescriptor,
}

impl MockProvider {
    /// # Panics
    ///
    /// If `dim` is zero.
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "mock provider dimension must be positive");
        Self {
            seed,
            descriptor: ProviderDescriptor {
                model_id: format!("mock-splitmix64-seed{seed}-dim{dim}"),
                embedding_dim: dim,
                normalizes_output: true,
            },
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The raw construction, exposed for golden-value tests.
    pub fn embed_bytes(&self, domain: u8, bytes: &[u8]) -> EmbeddingVector {
        let mut rng = SplitMix64::new(fnv1a64(&[&[domain], bytes]) ^ self.seed);
        let mut values: Vec<f64> = (0..self.descriptor.embedding_dim)
            .map(|_| rng.next_signed_unit())
            .collect();
        let norm = values.iter().fold(0.0, |acc, v| acc + v * v).sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        } else {
            // every draw landed exactly on 0.0; astronomically unlikely
            values[0] = 1.0;
        }
        EmbeddingVector::new(values).expect("mock values are finite")
    }
}

impl EmbeddingProvider for MockProvider {
    fn descriptor(&self) -> &ProviderDescriptor {
        &self.descriptor
    }

    /// Decodes the image so undecodable input fails exactly as it would with
    /// a real model, then hashes the raw file bytes.
    fn embed_image(&self, image: &ImageInput) -> Result<EmbeddingVector, ProviderError> {
        image.decode()?;
        Ok(self.embed_bytes(IMAGE_DOMAIN, image.bytes()))
    }

    fn embed_texts(&self, prompts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        validate_prompts(prompts)?;
        Ok(prompts
            .iter()
            .map(|p| self.embed_bytes(TEXT_DOMAIN, p.as_bytes()))
            .collect())
    }
}
