//! Domain types shared by every pipeline stage.
//!
//! Constructors validate the invariants; deserialization goes through the same
//! constructors so a decoded value is always valid.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::num::{self, Scalar};

/// Tolerance on the unit-norm invariant of [`EmbeddingVector`].
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// One answered exercise: text, correctness and difficulty in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InteractionRepr", into = "InteractionRepr")]
pub struct Interaction {
    exercise_text: String,
    concept_tags: Vec<String>,
    correct: bool,
    difficulty: f64,
    item_id: Option<String>,
    timestamp: Option<i64>,
}

#[derive(Serialize, Deserialize)]
struct InteractionRepr {
    exercise_text: String,
    #[serde(default)]
    concept_tags: Vec<String>,
    correct: u8,
    difficulty: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    item_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamp: Option<i64>,
}

impl TryFrom<InteractionRepr> for Interaction {
    type Error = Error;

    fn try_from(r: InteractionRepr) -> Result<Self> {
        let correct = match r.correct {
            0 => false,
            1 => true,
            other => return Err(Error::invalid("correct", format!("{other} not in {{0,1}}"))),
        };
        let mut i = Interaction::new(r.exercise_text, r.concept_tags, correct, r.difficulty)?;
        i.item_id = r.item_id;
        i.timestamp = r.timestamp;
        Ok(i)
    }
}

impl From<Interaction> for InteractionRepr {
    fn from(i: Interaction) -> Self {
        InteractionRepr {
            exercise_text: i.exercise_text,
            concept_tags: i.concept_tags,
            correct: i.correct as u8,
            difficulty: i.difficulty,
            item_id: i.item_id,
            timestamp: i.timestamp,
        }
    }
}

impl Interaction {
    pub fn new(
        exercise_text: impl Into<String>,
        concept_tags: Vec<String>,
        correct: bool,
        difficulty: f64,
    ) -> Result<Self> {
        let exercise_text = exercise_text.into();
        if exercise_text.trim().is_empty() {
            return Err(Error::invalid("exercise_text", "empty after trim"));
        }
        if !(0.0..=1.0).contains(&difficulty) {
            return Err(Error::OutOfRange(difficulty));
        }
        Ok(Interaction {
            exercise_text,
            concept_tags,
            correct,
            difficulty,
            item_id: None,
            timestamp: None,
        })
    }

    pub fn with_source(mut self, item_id: impl Into<String>, timestamp: i64) -> Self {
        self.item_id = Some(item_id.into());
        self.timestamp = Some(timestamp);
        self
    }

    pub fn exercise_text(&self) -> &str {
        &self.exercise_text
    }

    pub fn concept_tags(&self) -> &[String] {
        &self.concept_tags
    }

    pub fn correct(&self) -> bool {
        self.correct
    }

    pub fn difficulty(&self) -> f64 {
        self.difficulty
    }

    pub fn item_id(&self) -> Option<&str> {
        self.item_id.as_deref()
    }

    pub fn timestamp(&self) -> Option<i64> {
        self.timestamp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// A student's interactions in their original temporal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SequenceRepr", into = "SequenceRepr")]
pub struct StudentSequence {
    student_id: String,
    interactions: Vec<Interaction>,
    split: Split,
}

#[derive(Serialize, Deserialize)]
struct SequenceRepr {
    student_id: String,
    split: Split,
    interactions: Vec<Interaction>,
}

impl TryFrom<SequenceRepr> for StudentSequence {
    type Error = Error;

    fn try_from(r: SequenceRepr) -> Result<Self> {
        StudentSequence::new(r.student_id, r.interactions, r.split)
    }
}

impl From<StudentSequence> for SequenceRepr {
    fn from(s: StudentSequence) -> Self {
        SequenceRepr {
            student_id: s.student_id,
            split: s.split,
            interactions: s.interactions,
        }
    }
}

impl StudentSequence {
    /// Length bounds (5..=50) are an ingestion-time guarantee; prefixes and
    /// cold-start queries are shorter, so only non-emptiness is checked here.
    pub fn new(
        student_id: impl Into<String>,
        interactions: Vec<Interaction>,
        split: Split,
    ) -> Result<Self> {
        if interactions.is_empty() {
            return Err(Error::invalid("sequence", "no interactions"));
        }
        Ok(StudentSequence {
            student_id: student_id.into(),
            interactions,
            split,
        })
    }

    pub fn student_id(&self) -> &str {
        &self.student_id
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn last(&self) -> &Interaction {
        self.interactions.last().expect("non-empty by construction")
    }

    /// Timestamp of the last interaction, used to order sequences for the
    /// temporal split.
    pub fn representative_timestamp(&self) -> Option<i64> {
        self.last().timestamp()
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Splits off the final interaction as the prediction target. `None` for
    /// a single-interaction sequence (the history would be empty).
    pub fn split_target(&self) -> Option<(StudentSequence, Interaction)> {
        let (target, prefix) = self.interactions.split_last()?;
        if prefix.is_empty() {
            return None;
        }
        let history = StudentSequence {
            student_id: self.student_id.clone(),
            interactions: prefix.to_vec(),
            split: self.split,
        };
        Some((history, target.clone()))
    }

    /// First `len` interactions as a new sequence.
    pub fn prefix(&self, len: usize) -> Option<StudentSequence> {
        if len == 0 || len > self.len() {
            return None;
        }
        Some(StudentSequence {
            student_id: self.student_id.clone(),
            interactions: self.interactions[..len].to_vec(),
            split: self.split,
        })
    }

    pub fn accuracy(&self) -> f64 {
        let ok = self.interactions.iter().filter(|i| i.correct()).count();
        ok as f64 / self.len() as f64
    }
}

/// Calibrated linguistic difficulty level. Ordered EASY < MEDIUM < HARD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DifficultyTag {
    Easy,
    Medium,
    Hard,
}

impl fmt::Display for DifficultyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifficultyTag::Easy => "[EASY]",
            DifficultyTag::Medium => "[MEDIUM]",
            DifficultyTag::Hard => "[HARD]",
        })
    }
}

/// Unit-L2 embedding with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T: Scalar = f64>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    /// Normalizes `values` to unit length. Zero, empty or non-finite input is
    /// rejected.
    pub fn normalized(mut values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("embedding", "zero-dimensional"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding", "non-finite component"));
        }
        if !num::normalize_in_place(&mut values) {
            return Err(Error::invalid("embedding", "zero vector cannot be normalized"));
        }
        Ok(EmbeddingVector(values))
    }

    /// Wraps values that must already be unit length (e.g. when loading).
    pub fn from_unit(values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding", "non-finite component"));
        }
        let norm = num::l2_norm(&values).as_f64();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::invalid("embedding", format!("norm {norm} is not 1")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn cosine(&self, other: &Self) -> T {
        num::dot(&self.0, &other.0)
    }
}

impl<T: Scalar + Serialize> Serialize for EmbeddingVector<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for EmbeddingVector<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<T>::deserialize(d)?;
        EmbeddingVector::from_unit(values).map_err(serde::de::Error::custom)
    }
}

/// Closed set of behavioral archetypes a memory entry can be labeled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KeyPattern {
    #[serde(rename = "Solid Mastery")]
    SolidMastery,
    #[serde(rename = "Difficulty Spike Failure")]
    DifficultySpikeFailure,
    #[serde(rename = "Careless Slip")]
    CarelessSlip,
    #[serde(rename = "Concept Gaps")]
    ConceptGaps,
    #[serde(rename = "Lucky Guess")]
    LuckyGuess,
}

impl KeyPattern {
    pub const ALL: [KeyPattern; 5] = [
        KeyPattern::SolidMastery,
        KeyPattern::DifficultySpikeFailure,
        KeyPattern::CarelessSlip,
        KeyPattern::ConceptGaps,
        KeyPattern::LuckyGuess,
    ];

    pub fn label(self) -> &'static str {
        match self {
            KeyPattern::SolidMastery => "Solid Mastery",
            KeyPattern::DifficultySpikeFailure => "Difficulty Spike Failure",
            KeyPattern::CarelessSlip => "Careless Slip",
            KeyPattern::ConceptGaps => "Concept Gaps",
            KeyPattern::LuckyGuess => "Lucky Guess",
        }
    }

    /// Case- and punctuation-insensitive match against the five labels, so
    /// "careless slip", "CarelessSlip" and "careless_slip" all resolve.
    pub fn parse_lenient(s: &str) -> Option<KeyPattern> {
        let squash = |t: &str| -> String {
            t.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect()
        };
        let key = squash(s);
        KeyPattern::ALL.into_iter().find(|p| squash(p.label()) == key)
    }
}

impl fmt::Display for KeyPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Structured explanation of why a stored student reached their outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AnnotationRepr", into = "AnnotationRepr")]
pub struct Annotation {
    pub knowledge_state: String,
    pub key_pattern: KeyPattern,
    pub difficulty_context: String,
    pub causal_reasoning: String,
    pub summary: String,
    /// Set when the entry was produced by the rule annotator after the
    /// configured annotator failed.
    pub fallback: bool,
}

#[derive(Serialize, Deserialize)]
struct AnnotationRepr {
    knowledge_state: String,
    key_pattern: KeyPattern,
    difficulty_context: String,
    causal_reasoning: String,
    summary: String,
    #[serde(default)]
    fallback: bool,
}

impl TryFrom<AnnotationRepr> for Annotation {
    type Error = Error;

    fn try_from(r: AnnotationRepr) -> Result<Self> {
        Annotation::new(
            r.knowledge_state,
            r.key_pattern,
            r.difficulty_context,
            r.causal_reasoning,
            r.summary,
        )
        .map(|a| a.with_fallback(r.fallback))
    }
}

impl From<Annotation> for AnnotationRepr {
    fn from(a: Annotation) -> Self {
        AnnotationRepr {
            knowledge_state: a.knowledge_state,
            key_pattern: a.key_pattern,
            difficulty_context: a.difficulty_context,
            causal_reasoning: a.causal_reasoning,
            summary: a.summary,
            fallback: a.fallback,
        }
    }
}

impl Annotation {
    pub fn new(
        knowledge_state: impl Into<String>,
        key_pattern: KeyPattern,
        difficulty_context: impl Into<String>,
        causal_reasoning: impl Into<String>,
        summary: impl Into<String>,
    ) -> Result<Self> {
        let a = Annotation {
            knowledge_state: knowledge_state.into(),
            key_pattern,
            difficulty_context: difficulty_context.into(),
            causal_reasoning: causal_reasoning.into(),
            summary: summary.into(),
            fallback: false,
        };
        for (name, field) in [
            ("knowledge_state", &a.knowledge_state),
            ("difficulty_context", &a.difficulty_context),
            ("causal_reasoning", &a.causal_reasoning),
            ("summary", &a.summary),
        ] {
            if field.trim().is_empty() {
                return Err(Error::invalid("annotation", format!("{name} is empty")));
            }
        }
        Ok(a)
    }

    pub fn with_fallback(mut self, fallback: bool) -> Self {
        self.fallback = fallback;
        self
    }
}

/// Schema cluster identifier. `Generic` is the cold-start / noise pool and
/// sorts after every numbered cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClusterId {
    Cluster(u32),
    Generic,
}

impl ClusterId {
    pub fn is_generic(self) -> bool {
        matches!(self, ClusterId::Generic)
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterId::Cluster(k) => write!(f, "{k}"),
            ClusterId::Generic => f.write_str("GENERIC"),
        }
    }
}

impl Serialize for ClusterId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ClusterId::Cluster(k) => s.serialize_u32(*k),
            ClusterId::Generic => s.serialize_str("GENERIC"),
        }
    }
}

impl<'de> Deserialize<'de> for ClusterId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(k) => Ok(ClusterId::Cluster(k)),
            Raw::Str(s) if s.eq_ignore_ascii_case("generic") => Ok(ClusterId::Generic),
            Raw::Str(s) => s
                .parse()
                .map(ClusterId::Cluster)
                .map_err(|_| serde::de::Error::custom(format!("bad cluster id {s:?}"))),
        }
    }
}

/// One annotated paradigm: a training student's history, the outcome on the
/// next question, and the annotation explaining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EntryRepr", into = "EntryRepr")]
pub struct MemoryEntry {
    entry_id: u64,
    history: StudentSequence,
    target: Interaction,
    outcome: bool,
    annotation: Annotation,
    embedding: EmbeddingVector<f64>,
    cluster_id: ClusterId,
}

#[derive(Serialize, Deserialize)]
struct EntryRepr {
    entry_id: u64,
    student_id: String,
    cluster_id: ClusterId,
    history: Vec<Interaction>,
    target: Interaction,
    outcome: u8,
    annotation: Annotation,
    embedding: EmbeddingVector<f64>,
}

impl TryFrom<EntryRepr> for MemoryEntry {
    type Error = Error;

    fn try_from(r: EntryRepr) -> Result<Self> {
        let outcome = match r.outcome {
            0 => false,
            1 => true,
            o => return Err(Error::invalid("outcome", format!("{o} not in {{0,1}}"))),
        };
        let history = StudentSequence::new(r.student_id, r.history, Split::Train)?;
        MemoryEntry::new(
            r.entry_id,
            history,
            r.target,
            outcome,
            r.annotation,
            r.embedding,
            r.cluster_id,
        )
    }
}

impl From<MemoryEntry> for EntryRepr {
    fn from(e: MemoryEntry) -> Self {
        EntryRepr {
            entry_id: e.entry_id,
            student_id: e.history.student_id,
            cluster_id: e.cluster_id,
            history: e.history.interactions,
            target: e.target,
            outcome: e.outcome as u8,
            annotation: e.annotation,
            embedding: e.embedding,
        }
    }
}

impl MemoryEntry {
    pub fn new(
        entry_id: u64,
        history: StudentSequence,
        target: Interaction,
        outcome: bool,
        annotation: Annotation,
        embedding: EmbeddingVector<f64>,
        cluster_id: ClusterId,
    ) -> Result<Self> {
        if history.split() != Split::Train {
            return Err(Error::invalid(
                "memory entry",
                format!("student {} is not from the training split", history.student_id()),
            ));
        }
        Ok(MemoryEntry {
            entry_id,
            history,
            target,
            outcome,
            annotation,
            embedding,
            cluster_id,
        })
    }

    pub fn entry_id(&self) -> u64 {
        self.entry_id
    }

    pub fn student_id(&self) -> &str {
        self.history.student_id()
    }

    pub fn history(&self) -> &StudentSequence {
        &self.history
    }

    pub fn target(&self) -> &Interaction {
        &self.target
    }

    pub fn outcome(&self) -> bool {
        self.outcome
    }

    pub fn annotation(&self) -> &Annotation {
        &self.annotation
    }

    pub fn embedding(&self) -> &EmbeddingVector<f64> {
        &self.embedding
    }

    pub fn cluster_id(&self) -> ClusterId {
        self.cluster_id
    }

    pub(crate) fn relabel(mut self, entry_id: u64, cluster_id: ClusterId) -> Self {
        self.entry_id = entry_id;
        self.cluster_id = cluster_id;
        self
    }
}

/// A memory entry scored against a query. Scores are normalized to `[0, 1]`
/// and `fused = alpha * dense + (1 - alpha) * sparse`.
#[derive(Debug, Clone)]
pub struct RetrievalCandidate {
    pub entry: Arc<MemoryEntry>,
    pub dense_score: f64,
    pub sparse_score: f64,
    pub fused_score: f64,
}

/// δ policy for the spike rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaMode {
    /// Derived per query from the filtered paradigms.
    Dynamic,
    Fixed(f64),
}

impl Serialize for DeltaMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            DeltaMode::Dynamic => s.serialize_str("dynamic"),
            DeltaMode::Fixed(d) => s.serialize_f64(*d),
        }
    }
}

impl<'de> Deserialize<'de> for DeltaMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(DeltaMode::Fixed(v)),
            Raw::Str(s) if s.eq_ignore_ascii_case("dynamic") => Ok(DeltaMode::Dynamic),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad delta {s:?}"))),
        }
    }
}

/// Spike-rule and quality-filter parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpikeConfig {
    pub streak_len: usize,
    pub delta: DeltaMode,
    pub tau: f64,
    pub length_ratio_bounds: (f64, f64),
}

impl Default for SpikeConfig {
    fn default() -> Self {
        SpikeConfig {
            streak_len: 3,
            delta: DeltaMode::Dynamic,
            tau: 0.3,
            length_ratio_bounds: (0.5, 2.0),
        }
    }
}

impl SpikeConfig {
    pub fn validate(&self) -> Result<()> {
        let (low, high) = self.length_ratio_bounds;
        if !(low > 0.0 && low <= 1.0 && 1.0 <= high) {
            return Err(Error::Config(format!(
                "length ratio bounds ({low}, {high}) must satisfy 0 < low <= 1 <= high"
            )));
        }
        if self.streak_len < 1 {
            return Err(Error::Config("streak_len must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if let DeltaMode::Fixed(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Config(format!("fixed delta {d} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Constraint {
    SpikeRule,
}

/// Final output for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub student_id: String,
    pub probability: f64,
    /// Predictor output before the spike clamp.
    pub raw_probability: f64,
    pub label: u8,
    pub reasoning_trace: String,
    pub constraints_fired: BTreeSet<Constraint>,
    pub retrieved_ids: Vec<u64>,
    pub retrieved_clusters: Vec<ClusterId>,
    /// Entries that survived the quality filter and reached the prompt.
    pub paradigm_ids: Vec<u64>,
    pub routed_cluster: Option<ClusterId>,
    pub delta: Option<f64>,
    /// True when the spike clamp changed the probability.
    pub clamped: bool,
    /// True when the heuristic predictor stood in for a failed model call.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome: Option<u8>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl PredictionRecord {
    pub fn label_for(probability: f64, threshold: f64) -> u8 {
        (probability >= threshold) as u8
    }

    pub fn fired(&self, c: Constraint) -> bool {
        self.constraints_fired.contains(&c)
    }
}
