use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::http::{env_key, JsonClient, RetryPolicy};
use crate::model::EmbeddingVector;

pub const EMBED_KEY_VAR: &str = "MERIT_EMBED_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub dimension: usize,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://localhost:8080/v1/embeddings".into(),
            model: "qwen3-embedding-8b".into(),
            dimension: 4096,
            batch_size: 32,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// Embedding endpoint speaking `{model, input: [..]} -> {data: [{embedding}]}`.
#[derive(Debug, Clone)]
pub struct RemoteProvider {
    cfg: RemoteConfig,
    client: JsonClient,
    name: String,
}

impl RemoteProvider {
    /// Reads the API key from `MERIT_EMBED_API_KEY`.
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        Self::with_key(cfg, env_key(EMBED_KEY_VAR))
    }

    pub fn with_key(cfg: RemoteConfig, api_key: Option<String>) -> Result<Self> {
        if cfg.batch_size == 0 || cfg.dimension == 0 {
            return Err(Error::Config("embedding batch_size and dimension must be positive".into()));
        }
        let client = JsonClient::new(cfg.endpoint.clone(), api_key, cfg.retry)?;
        let name = format!("remote:{}", cfg.model);
        Ok(RemoteProvider { cfg, client, name })
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let resp = self.client.post(&json!({ "model": self.cfg.model, "input": texts }))?;
        parse_embeddings(&resp, texts.len(), self.cfg.dimension)
    }
}

fn parse_embeddings(resp: &Value, expected: usize, dimension: usize) -> Result<Vec<EmbeddingVector>> {
    let data = resp
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::MalformedResponse("missing `data` array".into()))?;
    if data.len() != expected {
        return Err(Error::MalformedResponse(format!(
            "expected {expected} embeddings, got {}",
            data.len()
        )));
    }
    // honor an explicit `index` field when the server reorders results
    let mut rows: Vec<(usize, &Value)> = data
        .iter()
        .enumerate()
        .map(|(i, d)| (d.get("index").and_then(Value::as_u64).map_or(i, |x| x as usize), d))
        .collect();
    rows.sort_by_key(|(i, _)| *i);
    rows.into_iter()
        .map(|(_, d)| {
            let values: Vec<f64> = d
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::MalformedResponse("missing `embedding`".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| Error::MalformedResponse("non-numeric component".into())))
                .collect::<Result<_>>()?;
            if values.len() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    got: values.len(),
                });
            }
            EmbeddingVector::normalized(values)
        })
        .collect()
}

impl EmbeddingProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.cfg.dimension
    }

    /// Sends `batch_size` texts per request with at most `max_in_flight`
    /// requests outstanding.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let batches: Vec<&[String]> = texts.chunks(self.cfg.batch_size).collect();
        let mut out = Vec::with_capacity(texts.len());
        for wave in batches.chunks(self.cfg.max_in_flight.max(1)) {
            let results: Vec<Result<Vec<EmbeddingVector>>> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|batch| scope.spawn(move || self.embed_batch(batch)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().unwrap_or_else(|_| Err(Error::ProviderUnavailable("worker panicked".into()))))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing::Scripted;

    fn cfg(url: &str, dimension: usize, batch_size: usize) -> RemoteConfig {
        RemoteConfig {
            endpoint: url.into(),
            model: "test-embed".into(),
            dimension,
            batch_size,
            max_in_flight: 1,
            retry: RetryPolicy {
                attempts: 3,
                initial_backoff_ms: 1,
                timeout_ms: 5_000,
            },
        }
    }

    #[test]
    fn batches_and_normalizes() {
        let server = Scripted::serve(vec![
            (200, r#"{"data":[{"embedding":[3,4]},{"embedding":[0,2]}]}"#.into()),
            (200, r#"{"data":[{"embedding":[1,0]}]}"#.into()),
        ]);
        let p = RemoteProvider::with_key(cfg(&server.url, 2, 2), Some("secret".into())).unwrap();
        let texts: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let v = p.embed(&texts).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0].as_slice(), &[0.6, 0.8]);
        assert_eq!(v[1].as_slice(), &[0.0, 1.0]);
        let reqs = server.finish();
        let first: Value = serde_json::from_str(&reqs[0]).unwrap();
        assert_eq!(first, json!({"model": "test-embed", "input": ["a", "b"]}));
    }

    #[test]
    fn wrong_dimension_is_reported() {
        let server = Scripted::serve(vec![(200, r#"{"data":[{"embedding":[1,0,0]}]}"#.into())]);
        let p = RemoteProvider::with_key(cfg(&server.url, 2, 8), None).unwrap();
        let err = p.embed(&["a".to_string()]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
        server.finish();
    }

    #[test]
    fn respects_index_field() {
        let resp = json!({"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]}
        ]});
        let v = parse_embeddings(&resp, 2, 2).unwrap();
        assert_eq!(v[0].as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn unreachable_endpoint_is_provider_unavailable() {
        let mut c = cfg("http://127.0.0.1:9/none", 2, 2);
        c.retry.attempts = 2;
        let p = RemoteProvider::with_key(c, None).unwrap();
        assert!(matches!(p.embed(&["x".into()]), Err(Error::ProviderUnavailable(_))));
    }
}
