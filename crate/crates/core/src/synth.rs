//! Seeded synthetic data: the spike case-study scenario, a population with a
//! planted difficulty-spike effect, and a small ingest corpus with known
//! counts.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::RawRecord;
use crate::model::{Interaction, Split, StudentSequence};
use crate::schema::{ClusterParams, SchemaConfig};

struct Item {
    id: &'static str,
    text: &'static str,
    concept: &'static str,
    difficulty: f64,
}

const fn item(id: &'static str, text: &'static str, concept: &'static str, difficulty: f64) -> Item {
    Item {
        id,
        text,
        concept,
        difficulty,
    }
}

const EASY: [Item; 8] = [
    item("e01", "Range", "range", 0.0),
    item("e02", "Mode", "mode", 0.05),
    item("e03", "Stem and Leaf Plot", "stem leaf plot", 0.1),
    item("e04", "Addition and Subtraction of Integers", "integers", 0.15),
    item("e05", "Place Value", "place value", 0.2),
    item("e06", "Reading Bar Graphs", "bar graph", 0.25),
    item("e07", "Rounding Whole Numbers", "rounding", 0.1),
    item("e08", "Ordering Decimals", "decimals", 0.3),
];

const MEDIUM: [Item; 6] = [
    item("m01", "Equivalent Fractions", "fractions", 0.4),
    item("m02", "Percent of a Number", "percent", 0.45),
    item("m03", "Ratio and Proportion", "ratio", 0.5),
    item("m04", "Area of Rectangles", "area", 0.55),
    item("m05", "Order of Operations", "order of operations", 0.6),
    item("m06", "Mean of a Data Set", "mean", 0.65),
];

const HARD: [Item; 6] = [
    item("h01", "Venn Diagram", "venn diagram", 1.0),
    item("h02", "Probability of Compound Events", "probability", 0.9),
    item("h03", "Median of Grouped Data", "median", 0.85),
    item("h04", "Systems of Linear Equations", "linear equations", 0.8),
    item("h05", "Volume of Composite Solids", "volume", 0.75),
    item("h06", "Scientific Notation Operations", "scientific notation", 0.95),
];

fn record(student: &str, ts: i64, it: &Item, correct: bool) -> RawRecord {
    RawRecord {
        student_id: student.to_string(),
        timestamp: ts,
        item_id: it.id.to_string(),
        exercise_text: it.text.to_string(),
        concept_tags: vec![it.concept.to_string()],
        correct,
        difficulty: Some(it.difficulty),
    }
}

fn interaction(text: &str, concept: &str, correct: bool, d: f64) -> Interaction {
    Interaction::new(text, vec![concept.to_string()], correct, d).expect("valid synthetic interaction")
}

/// The difficulty-spike case study: a query student with five correct
/// answers on a trivial item facing a maximally hard one, plus training
/// peers. Three peers share the statistics theme and faced HARD targets
/// (one failed after a trivial streak, two succeeded after steady medium
/// work); five are unrelated.
#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub peers: Vec<StudentSequence>,
    pub history: StudentSequence,
    pub target: Interaction,
    pub outcome: bool,
}

impl CaseStudy {
    /// Clustering settings that keep all peers in one schema.
    pub fn schema_config() -> SchemaConfig {
        SchemaConfig {
            cluster: ClusterParams { eps: 2.0, min_pts: 3 },
            ..SchemaConfig::default()
        }
    }
}

pub fn case_study() -> CaseStudy {
    let stat = |id: &str, hist: &[(&str, &str, bool, f64)], target: (&str, &str, bool, f64)| {
        let mut its: Vec<Interaction> = hist.iter().map(|&(t, c, ok, d)| interaction(t, c, ok, d)).collect();
        its.push(interaction(target.0, target.1, target.2, target.3));
        StudentSequence::new(id, its, Split::Train).expect("non-empty")
    };
    let peers = vec![
        stat(
            "peer-spike",
            &[
                ("Stem and Leaf Plot", "stem leaf plot", true, 0.0),
                ("Median", "median", true, 0.0),
                ("Range", "range", true, 0.0),
                ("Mode", "mode", true, 0.0),
                ("Range", "range", true, 0.0),
            ],
            ("Venn Diagram", "venn diagram", false, 1.0),
        ),
        stat(
            "peer-steady-a",
            &[
                ("Range", "range", true, 0.5),
                ("Median", "median", true, 0.6),
                ("Mean", "mean", false, 0.6),
                ("Median", "median", true, 0.7),
                ("Range", "range", true, 0.6),
            ],
            ("Median", "median", true, 0.8),
        ),
        stat(
            "peer-steady-b",
            &[
                ("Mode", "mode", true, 0.5),
                ("Range", "range", true, 0.6),
                ("Median", "median", true, 0.7),
                ("Mean", "mean", false, 0.6),
                ("Median", "median", true, 0.7),
            ],
            ("Venn Diagram", "venn diagram", true, 0.9),
        ),
        stat(
            "peer-algebra",
            &[
                ("Linear Equations", "algebra", true, 0.4),
                ("Linear Equations", "algebra", false, 0.5),
                ("Slope", "algebra", true, 0.5),
                ("Linear Equations", "algebra", true, 0.4),
                ("Slope", "algebra", false, 0.6),
            ],
            ("Quadratic Equations", "algebra", false, 0.8),
        ),
        stat(
            "peer-geometry",
            &[
                ("Triangle Angles", "geometry", true, 0.3),
                ("Circle Area", "geometry", true, 0.4),
                ("Triangle Angles", "geometry", false, 0.3),
                ("Polygon Perimeter", "geometry", true, 0.2),
                ("Circle Area", "geometry", true, 0.4),
            ],
            ("Polygon Perimeter", "geometry", true, 0.3),
        ),
        stat(
            "peer-fractions",
            &[
                ("Fraction Addition", "fractions", false, 0.3),
                ("Fraction Multiplication", "fractions", false, 0.4),
                ("Fraction Addition", "fractions", true, 0.3),
                ("Fraction Division", "fractions", false, 0.5),
                ("Fraction Multiplication", "fractions", false, 0.4),
            ],
            ("Fraction Division", "fractions", false, 0.5),
        ),
        stat(
            "peer-percent",
            &[
                ("Percent Increase", "percent", true, 0.4),
                ("Percent of a Number", "percent", true, 0.3),
                ("Percent Increase", "percent", true, 0.4),
                ("Percent Decrease", "percent", false, 0.5),
                ("Percent of a Number", "percent", true, 0.3),
            ],
            ("Percent Decrease", "percent", true, 0.5),
        ),
        stat(
            "peer-integers",
            &[
                ("Integer Subtraction", "integers", true, 0.2),
                ("Integer Multiplication", "integers", false, 0.3),
                ("Integer Subtraction", "integers", true, 0.2),
                ("Integer Division", "integers", true, 0.3),
                ("Absolute Value", "integers", false, 0.2),
            ],
            ("Integer Division", "integers", false, 0.3),
        ),
    ];
    let history = StudentSequence::new("712", vec![interaction("Range", "range", true, 0.0); 5], Split::Test)
        .expect("non-empty");
    CaseStudy {
        peers,
        history,
        target: interaction("Median", "median", false, 1.0),
        outcome: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub students: usize,
    /// Share of students set up for a difficulty spike.
    pub spike_fraction: f64,
    /// Failure probability on the spike item.
    pub spike_failure: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            students: 2000,
            spike_fraction: 0.35,
            spike_failure: 0.9,
            seed: 42,
        }
    }
}

/// Interaction logs for a population with planted structure.
///
/// Spike students answer mostly easy items well, end on three correct easy
/// items, and then face a HARD item that they fail with probability
/// `spike_failure`. Everyone else answers with a personal skill level over
/// mixed items and succeeds on the final item with probability equal to
/// their accuracy over the last ten responses. The final item of each
/// student is the prediction target.
pub fn planted_population(cfg: &PlantedConfig) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::new();
    for s in 0..cfg.students {
        let sid = format!("p{s:04}");
        let mut ts = rng.random_range(0..1_000_000i64) * 100;
        let len = rng.random_range(8..=20usize);
        let mut push = |rows: &mut Vec<RawRecord>, it: &Item, ok: bool| {
            ts += 1;
            rows.push(record(&sid, ts, it, ok));
        };
        if rng.random_bool(cfg.spike_fraction) {
            for i in 0..len - 1 {
                let it = EASY.choose(&mut rng).expect("non-empty");
                let ok = i >= len - 4 || rng.random_bool(0.85);
                push(&mut rows, it, ok);
            }
            let it = HARD.choose(&mut rng).expect("non-empty");
            let ok = !rng.random_bool(cfg.spike_failure);
            push(&mut rows, it, ok);
        } else {
            let skill = rng.random_range(0.15..0.9);
            let mut results = Vec::with_capacity(len);
            for _ in 0..len - 1 {
                let pool: &[Item] = match rng.random_range(0..3) {
                    0 => &EASY,
                    1 => &MEDIUM,
                    _ => &HARD,
                };
                let it = pool.choose(&mut rng).expect("non-empty");
                let ok = rng.random_bool(skill);
                results.push(ok);
                push(&mut rows, it, ok);
            }
            let recent = &results[results.len().saturating_sub(10)..];
            let streak = results.len() >= 3 && results[results.len() - 3..].iter().all(|&r| r);
            // keep these students outside the spike antecedent
            let pool: &[Item] = if streak {
                if rng.random_bool(0.5) {
                    &EASY
                } else {
                    &MEDIUM
                }
            } else {
                match rng.random_range(0..3) {
                    0 => &EASY,
                    1 => &MEDIUM,
                    _ => &HARD,
                }
            };
            let it = pool.choose(&mut rng).expect("non-empty");
            let acc = recent.iter().filter(|&&r| r).count() as f64 / recent.len() as f64;
            let ok = rng.random_bool(acc);
            push(&mut rows, it, ok);
        }
    }
    rows
}

/// Expected outcome of ingesting [`toy_corpus`], derived from how it was
/// generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyManifest {
    pub rows: usize,
    pub students: usize,
    pub retained_sequences: usize,
    pub dropped_short: usize,
    pub truncated: usize,
    pub responses_after_truncation: usize,
    pub questions: usize,
    pub concepts: usize,
    pub max_len: usize,
}

/// A 500-row corpus mixing short (dropped), normal and overlong (truncated)
/// students, with counts recorded in the manifest.
pub fn toy_corpus(seed: u64) -> (Vec<RawRecord>, ToyManifest) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<&Item> = EASY.iter().chain(MEDIUM.iter()).chain(HARD.iter()).collect();
    // lengths chosen to sum to 500: 3 short, 2 overlong, the rest 5..=30
    let mut lengths = vec![2usize, 3, 4, 60, 55];
    let mut remaining = 500 - lengths.iter().sum::<usize>();
    while remaining > 0 {
        let l = if remaining <= 30 { remaining.max(5) } else { rng.random_range(5..=30) };
        let l = l.min(remaining);
        if l < 5 {
            // fold a remainder too small to stand alone into the previous student
            *lengths.last_mut().expect("non-empty") += l;
            break;
        }
        lengths.push(l);
        remaining -= l;
    }
    let mut rows = Vec::with_capacity(500);
    let mut questions = BTreeSet::new();
    let mut concepts = BTreeSet::new();
    let (mut retained, mut dropped, mut truncated, mut responses) = (0, 0, 0, 0);
    for (s, &len) in lengths.iter().enumerate() {
        let sid = format!("t{s:03}");
        let start = rng.random_range(0..10_000i64) * 1000;
        let mut picked = Vec::with_capacity(len);
        for k in 0..len {
            let it = *all.choose(&mut rng).expect("non-empty");
            picked.push(it);
            rows.push(record(&sid, start + k as i64, it, rng.random_bool(0.6)));
        }
        if len < 5 {
            dropped += 1;
            continue;
        }
        retained += 1;
        if len > 50 {
            truncated += 1;
        }
        for it in &picked[len.saturating_sub(50)..] {
            questions.insert(it.id);
            concepts.insert(it.concept);
        }
        responses += len.min(50);
    }
    let manifest = ToyManifest {
        rows: rows.len(),
        students: lengths.len(),
        retained_sequences: retained,
        dropped_short: dropped,
        truncated,
        responses_after_truncation: responses,
        questions: questions.len(),
        concepts: concepts.len(),
        max_len: 50,
    };
    (rows, manifest)
}

/// Writes records in the ingest CSV layout.
pub fn write_csv<W: std::io::Write>(out: W, rows: &[RawRecord]) -> crate::error::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "student_id",
        "timestamp",
        "item_id",
        "exercise_text",
        "concept_tags",
        "correct",
        "difficulty",
    ])?;
    for r in rows {
        w.write_record([
            r.student_id.clone(),
            r.timestamp.to_string(),
            r.item_id.clone(),
            r.exercise_text.clone(),
            r.concept_tags.join(";"),
            (r.correct as u8).to_string(),
            r.difficulty.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| crate::error::Error::io("csv output", e))
}
