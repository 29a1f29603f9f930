//! Rendering of the online-inference prompt.

use crate::model::{DifficultyTag, Interaction, RetrievalCandidate, StudentSequence};
use crate::prompt::{fill, PARADIGM_BLOCK, SPIKE_RULE, STAGE3_INFERENCE};

use super::logic::difficulty_tag;

/// Shown in place of paradigm blocks when nothing survived retrieval.
pub const NO_PARADIGMS: &str = "(no analogous paradigms retrieved)";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptOptions {
    /// Include annotation fields in paradigm blocks.
    pub traces: bool,
    /// Include the spike-rule section.
    pub logic: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            traces: true,
            logic: true,
        }
    }
}

/// Everything a predictor gets to see.
#[derive(Debug, Clone)]
pub struct PromptContext {
    pub prompt: String,
    pub history: StudentSequence,
    pub target: Interaction,
    pub target_tag: DifficultyTag,
    pub spike_active: bool,
    /// The filtered paradigms rendered into the prompt, in fused order.
    pub paradigms: Vec<RetrievalCandidate>,
}

fn tag(i: &Interaction) -> DifficultyTag {
    difficulty_tag(i.difficulty()).expect("interaction difficulty is validated")
}

fn concepts(i: &Interaction) -> String {
    if i.concept_tags().is_empty() {
        String::new()
    } else {
        format!(" | concepts: {}", i.concept_tags().join(", "))
    }
}

/// History line with the difficulty shown as its calibrated tag.
pub fn calibrated_line(i: &Interaction) -> String {
    format!(
        "Q: {}{} | difficulty: {} | result: {}",
        i.exercise_text().trim(),
        concepts(i),
        tag(i),
        if i.correct() { "correct" } else { "incorrect" }
    )
}

fn compact_history(h: &StudentSequence) -> String {
    h.interactions()
        .iter()
        .map(|i| {
            format!(
                "{} (d={:.1}, {})",
                i.exercise_text().trim(),
                i.difficulty(),
                if i.correct() { "Correct" } else { "Incorrect" }
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn paradigm_block(index: usize, c: &RetrievalCandidate, traces: bool) -> String {
    let e = &c.entry;
    let outcome = format!(
        "{} on next question ({}, d={:.1}, {})",
        if e.outcome() { "True" } else { "False" },
        e.target().exercise_text().trim(),
        e.target().difficulty(),
        tag(e.target())
    );
    let history = compact_history(e.history());
    let index = index.to_string();
    if traces {
        let a = e.annotation();
        let summary = format!("{} History: {history}", a.knowledge_state);
        fill(
            PARADIGM_BLOCK,
            &[
                ("index", &index),
                ("retrieved_history", &summary),
                ("retrieved_pattern", a.key_pattern.label()),
                ("retrieved_outcome", &outcome),
                ("retrieved_reasoning", &a.causal_reasoning),
            ],
        )
    } else {
        // raw history and outcome only: annotation lines are dropped
        fill(
            PARADIGM_BLOCK,
            &[("index", &index), ("retrieved_history", &history), ("retrieved_outcome", &outcome)],
        )
        .lines()
        .filter(|l| !l.starts_with("Pattern:") && !l.starts_with("Reasoning:"))
        .map(|l| format!("{l}\n"))
        .collect()
    }
}

/// Renders the inference prompt: calibrated history, target with its tag,
/// one block per paradigm (or the no-paradigm sentinel) and, unless logic is
/// disabled, the spike-rule section.
pub fn build_prompt(
    history: &StudentSequence,
    target: &Interaction,
    retrieved: &[RetrievalCandidate],
    spike_active: bool,
    opts: PromptOptions,
) -> PromptContext {
    let lines: Vec<String> = history.interactions().iter().map(calibrated_line).collect();
    let target_tag = tag(target);
    let paradigms = if retrieved.is_empty() {
        format!("{NO_PARADIGMS}\n")
    } else {
        retrieved
            .iter()
            .enumerate()
            .map(|(i, c)| paradigm_block(i + 1, c, opts.traces))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let logic = if opts.logic {
        let status = if spike_active {
            "Status: the antecedent holds for this student (recent correct streak, target labeled [HARD]).\n"
        } else {
            "Status: the antecedent does not hold for this student.\n"
        };
        format!("\n{SPIKE_RULE}{status}\n")
    } else {
        "\n".to_string()
    };
    let prompt = fill(
        STAGE3_INFERENCE,
        &[
            ("student_history_sequence", &lines.join("\n")),
            (
                "target_question_content",
                &format!("{}{}", target.exercise_text().trim(), concepts(target)),
            ),
            ("difficulty_tag", &target_tag.to_string()),
            ("retrieved_paradigms", &paradigms),
            ("logic_constraints", &logic),
        ],
    );
    PromptContext {
        prompt,
        history: history.clone(),
        target: target.clone(),
        target_tag,
        spike_active,
        paradigms: retrieved.to_vec(),
    }
}
