//! Predictors: the LLM-backed one and deterministic offline stand-ins.

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::llm::{ask_json, coerce_probability, ChatClient};
use crate::model::{Interaction, StudentSequence};

use super::render::PromptContext;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    pub probability: f64,
    pub reasoning_trace: String,
    /// Set when a fallback stood in for the configured predictor.
    pub fallback: bool,
}

pub trait Predictor: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, ctx: &PromptContext) -> Result<PredictorOutput>;
}

pub const HEURISTIC_WEIGHT: f64 = 0.6;
pub const RECENT_WINDOW: usize = 10;

/// `clamp(0.05, 0.95, 0.6 * recent_accuracy + 0.4 * (1 - difficulty))`,
/// with recent accuracy over the last 10 responses.
pub fn heuristic_predict(history: &StudentSequence, target: &Interaction) -> f64 {
    let its = history.interactions();
    let recent = &its[its.len().saturating_sub(RECENT_WINDOW)..];
    let acc = recent.iter().filter(|i| i.correct()).count() as f64 / recent.len().max(1) as f64;
    (HEURISTIC_WEIGHT * acc + (1.0 - HEURISTIC_WEIGHT) * (1.0 - target.difficulty())).clamp(0.05, 0.95)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicPredictor;

impl Predictor for HeuristicPredictor {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn predict(&self, ctx: &PromptContext) -> Result<PredictorOutput> {
        let p = heuristic_predict(&ctx.history, &ctx.target);
        Ok(PredictorOutput {
            probability: p,
            reasoning_trace: format!("Recent accuracy and target difficulty give {p:.2}."),
            fallback: false,
        })
    }
}

/// Offline predictor that also reads the retrieved paradigms: the
/// heuristic estimate blended with the fused-score-weighted mean outcome of
/// the paradigms. Without paradigms it is the plain heuristic.
#[derive(Debug, Clone, Copy)]
pub struct MemoryHeuristicPredictor {
    pub memory_weight: f64,
}

impl Default for MemoryHeuristicPredictor {
    fn default() -> Self {
        MemoryHeuristicPredictor { memory_weight: 0.5 }
    }
}

impl Predictor for MemoryHeuristicPredictor {
    fn name(&self) -> &str {
        "memory-heuristic"
    }

    fn predict(&self, ctx: &PromptContext) -> Result<PredictorOutput> {
        let base = heuristic_predict(&ctx.history, &ctx.target);
        if ctx.paradigms.is_empty() {
            return Ok(PredictorOutput {
                probability: base,
                reasoning_trace: format!("No paradigms; recent accuracy and target difficulty give {base:.2}."),
                fallback: false,
            });
        }
        let weight: f64 = ctx.paradigms.iter().map(|c| c.fused_score).sum();
        let memory = if weight > 0.0 {
            ctx.paradigms.iter().map(|c| c.fused_score * c.entry.outcome() as u8 as f64).sum::<f64>() / weight
        } else {
            ctx.paradigms.iter().filter(|c| c.entry.outcome()).count() as f64 / ctx.paradigms.len() as f64
        };
        let w = self.memory_weight.clamp(0.0, 1.0);
        let p = ((1.0 - w) * base + w * memory).clamp(0.0, 1.0);
        Ok(PredictorOutput {
            probability: p,
            reasoning_trace: format!(
                "History suggests {base:.2}; {} similar paradigms succeeded at a weighted rate of {memory:.2}.",
                ctx.paradigms.len()
            ),
            fallback: false,
        })
    }
}

/// Always answers `probability`. Useful as a stub.
#[derive(Debug, Clone, Copy)]
pub struct FixedPredictor(pub f64);

impl Predictor for FixedPredictor {
    fn name(&self) -> &str {
        "fixed"
    }

    fn predict(&self, _ctx: &PromptContext) -> Result<PredictorOutput> {
        Ok(PredictorOutput {
            probability: self.0,
            reasoning_trace: format!("Fixed response {:.2}.", self.0),
            fallback: false,
        })
    }
}

fn parse_prediction(obj: &Map<String, Value>) -> std::result::Result<(f64, String), String> {
    let p = obj
        .get("probability")
        .and_then(coerce_probability)
        .ok_or("missing or invalid `probability`")?;
    let trace = obj
        .get("reasoning_trace")
        .and_then(Value::as_str)
        .filter(|s| !s.trim().is_empty())
        .ok_or("missing `reasoning_trace`")?;
    Ok((p, trace.to_string()))
}

/// Sends the rendered prompt to a chat model. Unparseable replies are
/// re-prompted, then replaced by the heuristic with the fallback flag set;
/// an unreachable provider falls back too when `allow_fallback` is on.
pub struct LlmPredictor<C> {
    client: C,
    max_reprompts: u32,
    allow_fallback: bool,
}

impl<C: ChatClient> LlmPredictor<C> {
    pub fn new(client: C, max_reprompts: u32, allow_fallback: bool) -> Self {
        LlmPredictor {
            client,
            max_reprompts,
            allow_fallback,
        }
    }

    pub fn client(&self) -> &C {
        &self.client
    }
}

impl<C: ChatClient> Predictor for LlmPredictor<C> {
    fn name(&self) -> &str {
        self.client.name()
    }

    fn predict(&self, ctx: &PromptContext) -> Result<PredictorOutput> {
        match ask_json(&self.client, &ctx.prompt, self.max_reprompts, parse_prediction) {
            Ok((probability, reasoning_trace)) => Ok(PredictorOutput {
                probability,
                reasoning_trace,
                fallback: false,
            }),
            Err(e @ Error::ProviderUnavailable(_)) if !self.allow_fallback => Err(e),
            Err(e) => {
                tracing::warn!(student = ctx.history.student_id(), error = %e, "prediction failed, using heuristic");
                let p = heuristic_predict(&ctx.history, &ctx.target);
                Ok(PredictorOutput {
                    probability: p,
                    reasoning_trace: format!("Model reply unusable ({e}); heuristic estimate {p:.2}."),
                    fallback: true,
                })
            }
        }
    }
}
