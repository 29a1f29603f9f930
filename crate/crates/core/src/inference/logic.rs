//! Difficulty calibration and the spike rule.

use crate::error::{Error, Result};
use crate::model::{DifficultyTag, RetrievalCandidate, StudentSequence};

/// Difficulties below this are EASY.
pub const EASY_BELOW: f64 = 0.35;
/// Difficulties at or above this are HARD.
pub const HARD_FROM: f64 = 0.70;
/// Bounds applied to a data-derived δ.
pub const DELTA_BOUNDS: (f64, f64) = (0.2, 0.6);
/// Margin below δ that a clamped probability is pulled to.
pub const CLAMP_MARGIN: f64 = 0.01;

pub fn difficulty_tag(d: f64) -> Result<DifficultyTag> {
    if !(0.0..=1.0).contains(&d) {
        return Err(Error::OutOfRange(d));
    }
    Ok(if d < EASY_BELOW {
        DifficultyTag::Easy
    } else if d < HARD_FROM {
        DifficultyTag::Medium
    } else {
        DifficultyTag::Hard
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpikeCheck {
    pub active: bool,
    /// The history had fewer than `k` interactions, so no streak could be
    /// established.
    pub short_history: bool,
}

/// The spike antecedent: the last `k` responses are all correct and the next
/// item is HARD.
pub fn detect_spike(history: &StudentSequence, next_difficulty: f64, k: usize) -> Result<SpikeCheck> {
    let hard = difficulty_tag(next_difficulty)? == DifficultyTag::Hard;
    let its = history.interactions();
    if its.len() < k {
        return Ok(SpikeCheck {
            active: false,
            short_history: true,
        });
    }
    let streak = its[its.len() - k..].iter().all(|i| i.correct());
    Ok(SpikeCheck {
        active: streak && hard,
        short_history: false,
    })
}

/// Mean outcome of the candidates whose stored target is HARD, clamped to
/// [`DELTA_BOUNDS`]; `fallback` when there are none.
pub fn compute_delta(filtered: &[RetrievalCandidate], fallback: f64) -> f64 {
    compute_delta_within(filtered, fallback, DELTA_BOUNDS)
}

/// [`compute_delta`] with explicit clamp bounds.
pub fn compute_delta_within(filtered: &[RetrievalCandidate], fallback: f64, bounds: (f64, f64)) -> f64 {
    let outcomes: Vec<f64> = filtered
        .iter()
        .filter(|c| difficulty_tag(c.entry.target().difficulty()).ok() == Some(DifficultyTag::Hard))
        .map(|c| c.entry.outcome() as u8 as f64)
        .collect();
    if outcomes.is_empty() {
        return fallback;
    }
    let mean = outcomes.iter().sum::<f64>() / outcomes.len() as f64;
    mean.clamp(bounds.0, bounds.1)
}

/// Pulls `p` strictly below `delta` when it is not already. Returns the new
/// probability and whether it changed.
pub fn enforce_spike(p: f64, delta: f64) -> (f64, bool) {
    if p >= delta {
        ((delta - CLAMP_MARGIN).max(0.0), true)
    } else {
        (p, false)
    }
}
