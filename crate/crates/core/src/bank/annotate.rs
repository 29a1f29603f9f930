//! Annotators that explain a stored outcome: a deterministic rule-based one
//! and an LLM-backed one speaking the paradigm-construction prompt.

use serde_json::{Map, Value};

use crate::error::Result;
use crate::inference::difficulty_tag;
use crate::llm::{ask_json, ChatClient};
use crate::model::{Annotation, DifficultyTag, Interaction, KeyPattern, StudentSequence};
use crate::prompt::{fill, STAGE2_PARADIGM};
use crate::text::serialize_interaction;

pub trait Annotator: Send + Sync {
    fn name(&self) -> &str;
    fn annotate(&self, history: &StudentSequence, target: &Interaction, outcome: bool) -> Result<Annotation>;
}

/// Wraps [`rule_annotate`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleAnnotator;

impl Annotator for RuleAnnotator {
    fn name(&self) -> &str {
        "rules"
    }

    fn annotate(&self, history: &StudentSequence, target: &Interaction, outcome: bool) -> Result<Annotation> {
        Ok(rule_annotate(history, target, outcome))
    }
}

pub struct LlmAnnotator<C> {
    client: C,
    max_reprompts: u32,
}

impl<C: ChatClient> LlmAnnotator<C> {
    pub fn new(client: C, max_reprompts: u32) -> Self {
        LlmAnnotator { client, max_reprompts }
    }
}

impl<C: ChatClient> Annotator for LlmAnnotator<C> {
    fn name(&self) -> &str {
        self.client.name()
    }

    fn annotate(&self, history: &StudentSequence, target: &Interaction, outcome: bool) -> Result<Annotation> {
        llm_annotate(history, target, outcome, &self.client, self.max_reprompts)
    }
}

fn tag_of(i: &Interaction) -> DifficultyTag {
    difficulty_tag(i.difficulty()).expect("interaction difficulty is validated")
}

fn concept_of(target: &Interaction) -> &str {
    target
        .concept_tags()
        .first()
        .map(String::as_str)
        .unwrap_or_else(|| target.exercise_text())
}

/// Accuracy over history items sharing a concept tag with `target` (or, for
/// untagged targets, the same exercise text). `None` without prior attempts.
fn concept_accuracy(history: &StudentSequence, target: &Interaction) -> Option<(f64, usize)> {
    let related: Vec<&Interaction> = history
        .interactions()
        .iter()
        .filter(|i| {
            if target.concept_tags().is_empty() {
                i.exercise_text() == target.exercise_text()
            } else {
                i.concept_tags().iter().any(|t| target.concept_tags().contains(t))
            }
        })
        .collect();
    if related.is_empty() {
        return None;
    }
    let ok = related.iter().filter(|i| i.correct()).count();
    Some((ok as f64 / related.len() as f64, related.len()))
}

/// Deterministic annotation. The key pattern comes from the first rule that
/// matches:
///
/// 1. failed a HARD target right after three correct non-HARD items →
///    Difficulty Spike Failure
/// 2. failed an EASY target with overall accuracy ≥ 0.7 → Careless Slip
/// 3. failed with concept accuracy < 0.5 → Concept Gaps
/// 4. solved a HARD target with overall accuracy < 0.4 → Lucky Guess
/// 5. otherwise Solid Mastery on success, Concept Gaps on failure.
pub fn rule_annotate(history: &StudentSequence, target: &Interaction, outcome: bool) -> Annotation {
    let its = history.interactions();
    let n = its.len();
    let acc = history.accuracy();
    let correct = its.iter().filter(|i| i.correct()).count();
    let mean_d = its.iter().map(Interaction::difficulty).sum::<f64>() / n as f64;
    let tag = tag_of(target);
    let d = target.difficulty();
    let concept = concept_of(target);
    let concept_acc = concept_accuracy(history, target);
    let tail = &its[n.saturating_sub(3)..];
    let easy_streak = tail.len() == 3 && tail.iter().all(|i| i.correct() && tag_of(i) != DifficultyTag::Hard);

    let mut tag_counts = [0usize; 3];
    for i in its {
        tag_counts[tag_of(i) as usize] += 1;
    }
    let usual = [DifficultyTag::Easy, DifficultyTag::Medium, DifficultyTag::Hard]
        .into_iter()
        .max_by_key(|t| (tag_counts[*t as usize], std::cmp::Reverse(*t)))
        .expect("three tags");

    let (pattern, reasoning) = if !outcome && tag == DifficultyTag::Hard && easy_streak {
        (
            KeyPattern::DifficultySpikeFailure,
            format!(
                "The student's streak of correct answers on non-HARD items (mean difficulty {mean_d:.2}) created a misleading sense of momentum. \
                 The failure was caused by a spike in difficulty ({mean_d:.1} -> {d:.1}) on {concept}."
            ),
        )
    } else if !outcome && tag == DifficultyTag::Easy && acc >= 0.7 {
        (
            KeyPattern::CarelessSlip,
            format!(
                "Overall accuracy of {acc:.2} shows the student handles harder material, yet they missed an [EASY] item (difficulty {d:.2}). \
                 The error is best explained as a slip rather than a knowledge gap."
            ),
        )
    } else if !outcome && concept_acc.is_some_and(|(a, _)| a < 0.5) {
        let (a, m) = concept_acc.expect("checked");
        (
            KeyPattern::ConceptGaps,
            format!(
                "Accuracy on {concept} is only {a:.2} across {m} prior attempts. \
                 The failure continues a consistent gap in this topic."
            ),
        )
    } else if outcome && tag == DifficultyTag::Hard && acc < 0.4 {
        (
            KeyPattern::LuckyGuess,
            format!(
                "Overall accuracy is only {acc:.2}, yet the student answered a [HARD] item (difficulty {d:.2}) correctly. \
                 The success is not supported by the history and is likely a guess."
            ),
        )
    } else if outcome {
        (
            KeyPattern::SolidMastery,
            format!(
                "Accuracy of {acc:.2} across items of mean difficulty {mean_d:.2} supports a correct answer on this {tag} item. \
                 The outcome follows from consistent mastery of {concept}."
            ),
        )
    } else {
        (
            KeyPattern::ConceptGaps,
            format!(
                "Despite overall accuracy of {acc:.2}, the student failed this {tag} item on {concept}. \
                 The failure points to incomplete mastery of this concept."
            ),
        )
    };

    let concept_note = match concept_acc {
        Some((a, m)) => format!("accuracy on {concept}: {a:.2} over {m} attempts"),
        None => format!("no prior attempts on {concept}"),
    };
    let knowledge_state = format!("Overall accuracy {acc:.2} ({correct} of {n} correct); {concept_note}.");
    let relative = if d - mean_d > 0.4 {
        "significantly harder than previous items"
    } else if d - mean_d < -0.4 {
        "significantly easier than previous items"
    } else {
        "comparable to previous items"
    };
    let difficulty_context =
        format!("Target is {tag} (difficulty {d:.2}) while history is mostly {usual} (mean {mean_d:.2}); {relative}.");
    let summary = format!(
        "{} on {concept} ({}).",
        pattern.label(),
        if outcome { "correct" } else { "incorrect" }
    );
    Annotation::new(knowledge_state, pattern, difficulty_context, reasoning, summary).expect("fields are non-empty")
}

fn field(obj: &Map<String, Value>, key: &str) -> std::result::Result<String, String> {
    match obj.get(key).and_then(Value::as_str) {
        Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
        _ => Err(format!("missing or empty `{key}`")),
    }
}

pub(crate) fn parse_annotation(obj: &Map<String, Value>) -> std::result::Result<Annotation, String> {
    let raw_pattern = field(obj, "key_pattern")?;
    let pattern =
        KeyPattern::parse_lenient(&raw_pattern).ok_or_else(|| format!("key_pattern {raw_pattern:?} is not a known label"))?;
    Annotation::new(
        field(obj, "knowledge_state")?,
        pattern,
        field(obj, "difficulty_context")?,
        field(obj, "causal_reasoning")?,
        field(obj, "summary")?,
    )
    .map_err(|e| e.to_string())
}

/// Renders the paradigm-construction prompt for one stored tuple.
pub fn annotation_prompt(history: &StudentSequence, target: &Interaction, outcome: bool) -> String {
    let lines: Vec<String> = history.interactions().iter().map(serialize_interaction).collect();
    let target_line = format!(
        "{} | concepts: {} | difficulty: {:.2} {}",
        target.exercise_text().trim(),
        target.concept_tags().join(", "),
        target.difficulty(),
        tag_of(target)
    );
    fill(
        STAGE2_PARADIGM,
        &[
            ("student_history", &lines.join("\n")),
            ("target_question", &target_line),
            ("ground_truth", if outcome { "1" } else { "0" }),
        ],
    )
}

/// Asks the model for an annotation. Replies that are not a JSON object with
/// all five fields and a known key pattern are re-prompted up to
/// `max_reprompts` times, then surface as `MalformedResponse`.
pub fn llm_annotate(
    history: &StudentSequence,
    target: &Interaction,
    outcome: bool,
    client: &dyn ChatClient,
    max_reprompts: u32,
) -> Result<Annotation> {
    let prompt = annotation_prompt(history, target, outcome);
    ask_json(client, &prompt, max_reprompts, parse_annotation)
}
