//! Embedding providers and sequence embedding.

mod cache;
mod hashing;
mod remote;

pub use cache::CachedProvider;
pub use hashing::HashingProvider;
pub use remote::{RemoteConfig, RemoteProvider};

use crate::error::{Error, Result};
use crate::model::{EmbeddingVector, StudentSequence};
use crate::text::sequence_tokens;

/// Text placeholder embedded when denoising leaves no tokens.
pub const EMPTY_TEXT: &str = "empty";

/// Maps texts to unit vectors of a fixed dimension. Implementations must be
/// safe to call from several threads at once.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    /// One unit vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed(texts)
    }
}

/// The exact text handed to the provider for a sequence: its denoised tokens
/// joined by single spaces.
pub fn embedding_text(seq: &StudentSequence) -> String {
    let tokens = sequence_tokens(seq);
    if tokens.is_empty() {
        EMPTY_TEXT.to_string()
    } else {
        tokens.join(" ")
    }
}

pub fn embed_sequence(seq: &StudentSequence, provider: &dyn EmbeddingProvider) -> Result<EmbeddingVector> {
    embed_sequences(std::slice::from_ref(seq), provider).map(|mut v| v.remove(0))
}

/// Batch form of [`embed_sequence`]; checks the provider honored its
/// contract.
pub fn embed_sequences(seqs: &[StudentSequence], provider: &dyn EmbeddingProvider) -> Result<Vec<EmbeddingVector>> {
    let texts: Vec<String> = seqs.iter().map(embedding_text).collect();
    embed_checked(&texts, provider)
}

pub(crate) fn embed_checked(texts: &[String], provider: &dyn EmbeddingProvider) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let out = provider.embed(texts)?;
    if out.len() != texts.len() {
        return Err(Error::MalformedResponse(format!(
            "{} returned {} vectors for {} texts",
            provider.name(),
            out.len(),
            texts.len()
        )));
    }
    if let Some(v) = out.iter().find(|v| v.dimension() != provider.dimension()) {
        return Err(Error::DimensionMismatch {
            expected: provider.dimension(),
            got: v.dimension(),
        });
    }
    Ok(out)
}
