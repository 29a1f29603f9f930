//! Online inference: calibrate, retrieve, filter, prompt, predict, and
//! enforce the spike rule on the returned probability.

mod logic;
mod predictor;
mod render;

pub use logic::{
    compute_delta, compute_delta_within, detect_spike, difficulty_tag, enforce_spike, SpikeCheck, CLAMP_MARGIN, DELTA_BOUNDS, EASY_BELOW,
    HARD_FROM,
};
pub use predictor::{
    heuristic_predict, FixedPredictor, HeuristicPredictor, LlmPredictor, MemoryHeuristicPredictor, Predictor,
    PredictorOutput,
};
pub use render::{build_prompt, calibrated_line, PromptContext, PromptOptions, NO_PARADIGMS};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::bank::MemoryBank;
use crate::embed::{embed_sequence, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::model::{ClusterId, Constraint, DeltaMode, Interaction, PredictionRecord, SpikeConfig, StudentSequence};
use crate::retrieval::{
    quality_filter, retrieve_embedded, search_index, Indices, PartitionIndex, RetrievalConfig,
};
use crate::schema::SchemaModel;
use crate::text::sequence_tokens;

/// Pipeline components that can be switched off for ablations. With
/// `no_retrieval` set, `no_routing` and `no_traces` have nothing to act on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_retrieval: bool,
    pub no_routing: bool,
    pub no_traces: bool,
    pub no_logic: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        no_retrieval: false,
        no_routing: false,
        no_traces: false,
        no_logic: false,
    };

    /// The four single-component variants, named.
    pub fn variants() -> [(&'static str, Ablation); 4] {
        [
            ("no_routing", Ablation { no_routing: true, ..Self::FULL }),
            ("no_traces", Ablation { no_traces: true, ..Self::FULL }),
            ("no_logic", Ablation { no_logic: true, ..Self::FULL }),
            ("no_retrieval", Ablation { no_retrieval: true, ..Self::FULL }),
        ]
    }

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        for (on, n) in [
            (self.no_retrieval, "no_retrieval"),
            (self.no_routing && !self.no_retrieval, "no_routing"),
            (self.no_traces && !self.no_retrieval, "no_traces"),
            (self.no_logic, "no_logic"),
        ] {
            if on {
                parts.push(n);
            }
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub spike: SpikeConfig,
    pub retrieval: RetrievalConfig,
    /// Label threshold on the final probability.
    pub threshold: f64,
    /// δ when no HARD-target paradigm is available.
    pub delta_fallback: f64,
    /// Clamp applied to a data-derived δ.
    pub delta_bounds: (f64, f64),
    pub ablation: Ablation,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            spike: SpikeConfig::default(),
            retrieval: RetrievalConfig::default(),
            threshold: 0.5,
            delta_fallback: 0.5,
            delta_bounds: DELTA_BOUNDS,
            ablation: Ablation::default(),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        self.spike.validate()?;
        self.retrieval.validate()?;
        if !(0.0..=1.0).contains(&self.delta_fallback) || !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold and delta_fallback must lie in [0, 1]".into()));
        }
        let (lo, hi) = self.delta_bounds;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("delta bounds ({lo}, {hi}) must satisfy 0 < low <= high < 1")));
        }
        Ok(())
    }
}

/// Borrowed view of the offline artifacts needed at inference time.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub model: &'a SchemaModel,
    pub bank: &'a MemoryBank,
    pub indices: &'a Indices,
    /// Whole-bank index for unrouted search; required only with
    /// `no_routing`.
    pub flat: Option<&'a PartitionIndex>,
    pub provider: &'a dyn EmbeddingProvider,
}

/// Outcome of one prediction plus bookkeeping for reports.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub record: PredictionRecord,
    pub prompt: String,
    pub retrieval_calls: usize,
}

/// Predicts the target's correctness from `history`.
///
/// Retrieval runs against the routed partition (or the whole bank with
/// `no_routing`), candidates are quality-filtered, and the predictor sees the
/// rendered prompt. When the spike antecedent holds (and logic is enabled)
/// the record lists `SpikeRule`, and a probability at or above δ is pulled
/// to δ − 0.01.
pub fn predict(
    history: &StudentSequence,
    target: &Interaction,
    pipe: &Pipeline<'_>,
    predictor: &dyn Predictor,
    cfg: &InferenceConfig,
) -> Result<Prediction> {
    let ab = cfg.ablation;
    let mut warnings = Vec::new();
    difficulty_tag(target.difficulty())?;

    let mut candidates = Vec::new();
    let mut routed_cluster = None;
    let mut retrieval_calls = 0;
    if !ab.no_retrieval {
        if pipe.bank.is_empty() {
            warnings.push("memory bank is empty; predicting without paradigms".to_string());
        } else {
            let h = embed_sequence(history, pipe.provider)?;
            retrieval_calls = 1;
            if ab.no_routing {
                let flat = pipe
                    .flat
                    .ok_or_else(|| Error::Config("unrouted search needs a flat index".into()))?;
                candidates = search_index(flat, &h, &sequence_tokens(history), pipe.bank, &cfg.retrieval)?;
            } else {
                let r = retrieve_embedded(history, &h, pipe.model, pipe.indices, pipe.bank, &cfg.retrieval)?;
                routed_cluster = Some(r.assignment.cluster_id);
                if r.searched != r.assignment.cluster_id {
                    warnings.push(format!("partition {} is empty; searched GENERIC", r.assignment.cluster_id));
                }
                candidates = r.candidates;
            }
        }
    }
    let filtered = quality_filter(&candidates, history.len(), &cfg.spike);

    let spike = detect_spike(history, target.difficulty(), cfg.spike.streak_len)?;
    if spike.short_history {
        warnings.push(format!(
            "history shorter than streak length {}; spike rule not evaluated",
            cfg.spike.streak_len
        ));
    }
    let logic = !ab.no_logic;
    let spike_active = logic && spike.active;
    let delta = match cfg.spike.delta {
        DeltaMode::Dynamic => compute_delta_within(&filtered, cfg.delta_fallback, cfg.delta_bounds),
        DeltaMode::Fixed(d) => d,
    };

    let opts = PromptOptions {
        traces: !ab.no_traces,
        logic,
    };
    let ctx = build_prompt(history, target, &filtered, spike_active, opts);
    let out = predictor.predict(&ctx)?;
    if !out.probability.is_finite() {
        return Err(Error::MalformedResponse(format!(
            "{} returned probability {}",
            predictor.name(),
            out.probability
        )));
    }
    let raw = out.probability.clamp(0.0, 1.0);

    let mut constraints_fired = BTreeSet::new();
    let (probability, clamped) = if spike_active {
        constraints_fired.insert(Constraint::SpikeRule);
        enforce_spike(raw, delta)
    } else {
        (raw, false)
    };

    let record = PredictionRecord {
        student_id: history.student_id().to_string(),
        probability,
        raw_probability: raw,
        label: PredictionRecord::label_for(probability, cfg.threshold),
        reasoning_trace: out.reasoning_trace,
        constraints_fired,
        retrieved_ids: candidates.iter().map(|c| c.entry.entry_id()).collect(),
        retrieved_clusters: candidates.iter().map(|c| c.entry.cluster_id()).collect::<Vec<ClusterId>>(),
        paradigm_ids: filtered.iter().map(|c| c.entry.entry_id()).collect(),
        routed_cluster,
        delta: logic.then_some(delta),
        clamped,
        fallback: out.fallback,
        outcome: None,
        warnings,
    };
    Ok(Prediction {
        record,
        prompt: ctx.prompt,
        retrieval_calls,
    })
}
