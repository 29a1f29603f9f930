use sha2::{Digest, Sha256};

use super::EmbeddingProvider;
use crate::error::Result;
use crate::model::EmbeddingVector;

/// Offline provider: signed feature hashing of whitespace tokens.
///
/// Each token lands in one of `dimension` buckets with a ±1 sign, both taken
/// from its SHA-256 digest; counts are summed and the result L2-normalized.
/// Cosine similarity then tracks token overlap.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    dimension: usize,
}

impl HashingProvider {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        HashingProvider { dimension }
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let digest = Sha256::digest(token.as_bytes());
        let bytes: &[u8] = digest.as_ref();
        let idx = u64::from_le_bytes(bytes[..8].try_into().expect("digest is 32 bytes"));
        let sign = if bytes[8] & 1 == 0 { 1.0 } else { -1.0 };
        ((idx % self.dimension as u64) as usize, sign)
    }

    fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0.0f64; self.dimension];
        for token in text.split_whitespace() {
            let (i, s) = self.bucket(token);
            v[i] += s;
        }
        EmbeddingVector::normalized(v).unwrap_or_else(|_| {
            // no tokens, or every bucket cancelled out
            let (i, s) = self.bucket(text);
            let mut v = vec![0.0; self.dimension];
            v[i] = s;
            EmbeddingVector::normalized(v).expect("one-hot vector")
        })
    }
}

impl EmbeddingProvider for HashingProvider {
    fn name(&self) -> &str {
        "offline-hashing"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
