//! The single TOML configuration file. Every section and key is optional;
//! anything omitted keeps its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bank::BankConfig;
use crate::embed::{CachedProvider, EmbeddingProvider, HashingProvider, RemoteConfig, RemoteProvider};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::inference::{Ablation, InferenceConfig, DELTA_BOUNDS};
use crate::ingest::{FormatConfig, IngestConfig};
use crate::llm::LlmConfig;
use crate::model::{DeltaMode, SpikeConfig};
use crate::retrieval::{Bm25Params, RetrievalConfig};
use crate::schema::SchemaConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Remote,
    #[default]
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    pub provider: ProviderKind,
    /// Dimension of the offline hashing provider.
    pub offline_dimension: usize,
    /// On-disk embedding cache; unset disables caching.
    pub cache_dir: Option<PathBuf>,
    pub remote: RemoteConfig,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            provider: ProviderKind::Offline,
            offline_dimension: 512,
            cache_dir: None,
            remote: RemoteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSection {
    #[serde(flatten)]
    pub ingest: IngestConfig,
    #[serde(flatten)]
    pub format: FormatConfig,
}

/// Retrieval knobs plus the quality filter that acts on its output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSection {
    pub alpha: f64,
    pub n: usize,
    pub m_per_side: usize,
    pub tau: f64,
    pub length_ratio_bounds: (f64, f64),
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let r = RetrievalConfig::default();
        let s = SpikeConfig::default();
        RetrievalSection {
            alpha: r.alpha,
            n: r.n,
            m_per_side: r.m_per_side,
            tau: s.tau,
            length_ratio_bounds: s.length_ratio_bounds,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    #[default]
    Heuristic,
    MemoryHeuristic,
    Llm,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotatorKind {
    /// Rule-based annotations; used offline.
    #[default]
    Rules,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSection {
    pub streak_len: usize,
    pub delta: DeltaMode,
    pub delta_bounds: (f64, f64),
    pub delta_fallback: f64,
    pub threshold: f64,
    /// Used when the embedding provider is offline; remote runs use the LLM.
    pub offline_predictor: PredictorKind,
    pub memory_weight: f64,
    /// Substitute the heuristic when the LLM is unreachable.
    pub allow_fallback: bool,
    pub ablation: Ablation,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let i = InferenceConfig::default();
        InferenceSection {
            streak_len: i.spike.streak_len,
            delta: i.spike.delta,
            delta_bounds: DELTA_BOUNDS,
            delta_fallback: i.delta_fallback,
            threshold: i.threshold,
            offline_predictor: PredictorKind::Heuristic,
            memory_weight: 0.5,
            allow_fallback: false,
            ablation: Ablation::FULL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub embedding: EmbeddingSection,
    pub ingest: IngestSection,
    pub schema: SchemaConfig,
    pub bank: BankConfig,
    pub annotator: AnnotatorKind,
    pub retrieval: RetrievalSection,
    pub bm25: Bm25Params,
    pub inference: InferenceSection,
    pub llm: LlmConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            embedding: EmbeddingSection::default(),
            ingest: IngestSection::default(),
            schema: SchemaConfig::default(),
            bank: BankConfig::default(),
            annotator: AnnotatorKind::Rules,
            retrieval: RetrievalSection::default(),
            bm25: Bm25Params::default(),
            inference: InferenceSection::default(),
            llm: LlmConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn inference_config(&self) -> InferenceConfig {
        let r = &self.retrieval;
        let i = &self.inference;
        InferenceConfig {
            spike: SpikeConfig {
                streak_len: i.streak_len,
                delta: i.delta,
                tau: r.tau,
                length_ratio_bounds: r.length_ratio_bounds,
            },
            retrieval: RetrievalConfig {
                alpha: r.alpha,
                n: r.n,
                m_per_side: r.m_per_side,
            },
            threshold: i.threshold,
            delta_fallback: i.delta_fallback,
            delta_bounds: i.delta_bounds,
            ablation: i.ablation,
        }
    }

    /// The configured embedding provider, cached on disk when `cache_dir`
    /// is set. Remote providers read their key from `MERIT_EMBED_API_KEY`.
    pub fn embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let e = &self.embedding;
        Ok(match (e.provider, &e.cache_dir) {
            (ProviderKind::Offline, None) => Box::new(HashingProvider::new(e.offline_dimension)),
            (ProviderKind::Offline, Some(dir)) => {
                Box::new(CachedProvider::new(HashingProvider::new(e.offline_dimension), dir))
            }
            (ProviderKind::Remote, None) => Box::new(RemoteProvider::new(e.remote.clone())?),
            (ProviderKind::Remote, Some(dir)) => Box::new(CachedProvider::new(RemoteProvider::new(e.remote.clone())?, dir)),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.inference_config().validate()?;
        if self.embedding.offline_dimension == 0 {
            return Err(Error::Config("embedding.offline_dimension must be positive".into()));
        }
        if self.bank.k_bank == 0 {
            return Err(Error::Config("bank.k_bank must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.bank.min_success) {
            return Err(Error::Config("bank.min_success must lie in [0, 1]".into()));
        }
        if !(self.bm25.k1 >= 0.0 && (0.0..=1.0).contains(&self.bm25.b)) {
            return Err(Error::Config("bm25 needs k1 >= 0 and b in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.inference.memory_weight) {
            return Err(Error::Config("inference.memory_weight must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        let back = Config::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.inference_config(), InferenceConfig::default());
    }

    #[test]
    fn partial_file_overrides() {
        let cfg = Config::from_toml(
            r#"
            seed = 7
            [retrieval]
            alpha = 0.5
            tau = 0.1
            [bm25]
            k1 = 1.2
            [inference]
            delta = 0.4
            streak_len = 4
            [bank]
            k_bank = 20
            [schema]
            eps = 0.3
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        let i = cfg.inference_config();
        assert_eq!(i.retrieval.alpha, 0.5);
        assert_eq!(i.retrieval.n, 3);
        assert_eq!(i.spike.tau, 0.1);
        assert_eq!(i.spike.delta, DeltaMode::Fixed(0.4));
        assert_eq!(i.spike.streak_len, 4);
        assert_eq!(cfg.bm25.k1, 1.2);
        assert_eq!(cfg.bm25.b, 0.75);
        assert_eq!(cfg.bank.k_bank, 20);
        assert_eq!(cfg.schema.cluster.eps, 0.3);
        assert_eq!(cfg.schema.cluster.min_pts, 5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::from_toml("[retrieval]\nalpha = 1.5\n").is_err());
        assert!(Config::from_toml("[inference]\ndelta_bounds = [0.7, 0.2]\n").is_err());
        assert!(Config::from_toml("[embedding]\nprovider = \"cloud\"\n").is_err());
        assert!(Config::from_toml("[bank]\nk_bank = 0\n").is_err());
    }
}
