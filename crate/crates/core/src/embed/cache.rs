use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::model::EmbeddingVector;

/// Content-addressed on-disk cache in front of another provider.
///
/// Keys are the SHA-256 of `(provider name, text)`; each vector is stored as
/// a JSON array under `<dir>/<first two hex chars>/<hex>.json`.
pub struct CachedProvider<P> {
    inner: P,
    dir: PathBuf,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P, dir: impl Into<PathBuf>) -> Self {
        CachedProvider {
            inner,
            dir: dir.into(),
        }
    }

    pub fn cache_key(provider: &str, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(provider.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn path_for(&self, text: &str) -> PathBuf {
        let key = Self::cache_key(self.inner.name(), text);
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    fn load(&self, path: &Path) -> Option<EmbeddingVector> {
        let bytes = fs::read(path).ok()?;
        let v: EmbeddingVector = serde_json::from_slice(&bytes).ok()?;
        (v.dimension() == self.inner.dimension()).then_some(v)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let paths: Vec<PathBuf> = texts.iter().map(|t| self.path_for(t)).collect();
        let mut out: Vec<Option<EmbeddingVector>> = paths.iter().map(|p| self.load(p)).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed(&batch)?;
            if fresh.len() != batch.len() {
                return Err(Error::MalformedResponse("provider returned wrong number of vectors".into()));
            }
            for (&i, v) in missing.iter().zip(fresh) {
                let path = &paths[i];
                crate::jsonl::ensure_parent(path)?;
                let bytes = serde_json::to_vec(&v)?;
                fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashingProvider;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: HashingProvider,
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for Counting {
        fn name(&self) -> &str {
            "counting"
        }
        fn dimension(&self) -> usize {
            self.inner.dimension()
        }
        fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
            self.calls.fetch_add(texts.len(), Ordering::SeqCst);
            self.inner.embed(texts)
        }
    }

    #[test]
    fn second_lookup_hits_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = CachedProvider::new(
            Counting {
                inner: HashingProvider::new(16),
                calls: AtomicUsize::new(0),
            },
            dir.path(),
        );
        let texts = vec!["alpha beta".to_string(), "gamma".to_string()];
        let first = p.embed(&texts).unwrap();
        let second = p.embed(&texts).unwrap();
        assert_eq!(first, second);
        assert_eq!(p.inner.calls.load(Ordering::SeqCst), 2);
        let more = p.embed(&["gamma".into(), "delta".into()]).unwrap();
        assert_eq!(more[0], first[1]);
        assert_eq!(p.inner.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn key_depends_on_provider() {
        assert_ne!(
            CachedProvider::<HashingProvider>::cache_key("a", "text"),
            CachedProvider::<HashingProvider>::cache_key("b", "text")
        );
    }
}
