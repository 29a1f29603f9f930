//! Interaction-log ingestion: CSV parsing, difficulty estimation, length
//! filtering/truncation and the leak-free temporal split.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Interaction, Split, StudentSequence};

pub const REQUIRED_COLUMNS: [&str; 6] = [
    "student_id",
    "timestamp",
    "item_id",
    "exercise_text",
    "concept_tags",
    "correct",
];

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub student_id: String,
    pub timestamp: i64,
    pub item_id: String,
    pub exercise_text: String,
    pub concept_tags: Vec<String>,
    pub correct: bool,
    pub difficulty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FormatConfig {
    pub delimiter: u8,
    pub tag_separator: char,
    /// Fraction of malformed rows tolerated before parsing aborts.
    pub malformed_limit: f64,
}

impl Default for FormatConfig {
    fn default() -> Self {
        FormatConfig {
            delimiter: b',',
            tag_separator: ';',
            malformed_limit: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MalformedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParsedCorpus {
    pub records: Vec<RawRecord>,
    pub malformed: Vec<MalformedRow>,
}

struct Columns {
    student_id: usize,
    timestamp: usize,
    item_id: usize,
    exercise_text: usize,
    concept_tags: usize,
    correct: usize,
    difficulty: Option<usize>,
}

impl Columns {
    fn locate(headers: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| headers.iter().position(|h| h.trim() == name);
        let need = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));
        Ok(Columns {
            student_id: need("student_id")?,
            timestamp: need("timestamp")?,
            item_id: need("item_id")?,
            exercise_text: need("exercise_text")?,
            concept_tags: need("concept_tags")?,
            correct: need("correct")?,
            difficulty: find("difficulty"),
        })
    }
}

fn parse_row(row: &csv::StringRecord, cols: &Columns, tag_sep: char) -> Result<RawRecord, String> {
    let field = |i: usize| row.get(i).map(str::trim).ok_or_else(|| format!("missing field {i}"));
    let student_id = field(cols.student_id)?;
    if student_id.is_empty() {
        return Err("empty student_id".into());
    }
    let timestamp = field(cols.timestamp)?
        .parse::<i64>()
        .map_err(|e| format!("timestamp: {e}"))?;
    let exercise_text = field(cols.exercise_text)?;
    if exercise_text.is_empty() {
        return Err("empty exercise_text".into());
    }
    let correct = match field(cols.correct)? {
        "0" => false,
        "1" => true,
        other => return Err(format!("correct must be 0 or 1, got {other:?}")),
    };
    let difficulty = match cols.difficulty.and_then(|i| row.get(i)).map(str::trim) {
        None | Some("") => None,
        Some(s) => {
            let d: f64 = s.parse().map_err(|e| format!("difficulty: {e}"))?;
            if !(0.0..=1.0).contains(&d) {
                return Err(format!("difficulty {d} outside [0, 1]"));
            }
            Some(d)
        }
    };
    let concept_tags = field(cols.concept_tags)?
        .split(tag_sep)
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect();
    Ok(RawRecord {
        student_id: student_id.to_string(),
        timestamp,
        item_id: field(cols.item_id)?.to_string(),
        exercise_text: exercise_text.to_string(),
        concept_tags,
        correct,
        difficulty,
    })
}

/// Reads an interaction CSV. Records come back in file order; malformed rows
/// are skipped and reported unless they exceed the configured fraction.
pub fn parse_corpus(path: &Path, cfg: &FormatConfig) -> Result<ParsedCorpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(file, cfg)
}

pub fn parse_reader<R: std::io::Read>(reader: R, cfg: &FormatConfig) -> Result<ParsedCorpus> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(cfg.delimiter)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = Columns::locate(&headers)?;

    let mut records = Vec::new();
    let mut malformed = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let line = i as u64 + 2;
        match row {
            Ok(row) if row.len() != headers.len() => malformed.push(MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", headers.len(), row.len()),
            }),
            Ok(row) => match parse_row(&row, &cols, cfg.tag_separator) {
                Ok(r) => records.push(r),
                Err(reason) => malformed.push(MalformedRow { line, reason }),
            },
            Err(e) => malformed.push(MalformedRow {
                line,
                reason: e.to_string(),
            }),
        }
    }

    let total = records.len() + malformed.len();
    if total == 0 || records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if malformed.len() as f64 > cfg.malformed_limit * total as f64 {
        return Err(Error::MalformedRowLimitExceeded {
            bad: malformed.len(),
            total,
            limit_pct: cfg.malformed_limit * 100.0,
        });
    }
    Ok(ParsedCorpus { records, malformed })
}

/// Per-item difficulty estimated from training responses, with a global mean
/// for items never seen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyMap {
    pub items: BTreeMap<String, f64>,
    pub global_mean: f64,
    pub smoothing: f64,
}

impl DifficultyMap {
    pub fn get(&self, item_id: &str) -> f64 {
        self.items.get(item_id).copied().unwrap_or(self.global_mean)
    }

    pub fn contains(&self, item_id: &str) -> bool {
        self.items.contains_key(item_id)
    }
}

/// Laplace-smoothed error rate per item:
/// `1 - (correct + s) / (attempts + 2s)`.
pub fn estimate_difficulty<'a, I>(records: I, smoothing: f64) -> Result<DifficultyMap>
where
    I: IntoIterator<Item = &'a RawRecord>,
{
    if smoothing.is_nan() || smoothing < 0.0 {
        return Err(Error::Config(format!("smoothing {smoothing} must be >= 0")));
    }
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in records {
        let c = counts.entry(r.item_id.as_str()).or_default();
        c.0 += r.correct as u64;
        c.1 += 1;
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let items: BTreeMap<String, f64> = counts
        .into_iter()
        .map(|(id, (ok, n))| {
            let d = 1.0 - (ok as f64 + smoothing) / (n as f64 + 2.0 * smoothing);
            (id.to_string(), d.clamp(0.0, 1.0))
        })
        .collect();
    let global_mean = items.values().sum::<f64>() / items.len() as f64;
    Ok(DifficultyMap {
        items,
        global_mean,
        smoothing,
    })
}

/// A student's raw records after ordering, filtering and truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    pub student_id: String,
    pub records: Vec<RawRecord>,
}

/// Anything the temporal split can order.
pub trait Timestamped {
    fn student_id(&self) -> &str;
    fn representative_timestamp(&self) -> i64;
}

impl Timestamped for RawSequence {
    fn student_id(&self) -> &str {
        &self.student_id
    }

    fn representative_timestamp(&self) -> i64 {
        self.records.last().map(|r| r.timestamp).unwrap_or(i64::MIN)
    }
}

impl Timestamped for StudentSequence {
    fn student_id(&self) -> &str {
        StudentSequence::student_id(self)
    }

    fn representative_timestamp(&self) -> i64 {
        StudentSequence::representative_timestamp(self).unwrap_or(i64::MIN)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_len: 5,
            max_len: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub students_seen: usize,
    pub dropped_short: usize,
    pub truncated: usize,
    pub retained: usize,
}

/// Groups records per student, orders each student's records by timestamp
/// (stable, so file order breaks ties), drops students with fewer than
/// `min_len` interactions and keeps the most recent `max_len`.
pub fn preprocess(records: &[RawRecord], cfg: &PreprocessConfig) -> (Vec<RawSequence>, PreprocessReport) {
    let mut by_student: BTreeMap<&str, Vec<RawRecord>> = BTreeMap::new();
    for r in records {
        by_student.entry(&r.student_id).or_default().push(r.clone());
    }
    let students_seen = by_student.len();

    let processed: Vec<(RawSequence, bool)> = by_student
        .into_par_iter()
        .filter_map(|(id, mut recs)| {
            recs.sort_by_key(|r| r.timestamp);
            if recs.len() < cfg.min_len {
                return None;
            }
            let truncated = recs.len() > cfg.max_len;
            if truncated {
                recs.drain(..recs.len() - cfg.max_len);
            }
            Some((
                RawSequence {
                    student_id: id.to_string(),
                    records: recs,
                },
                truncated,
            ))
        })
        .collect();

    let report = PreprocessReport {
        students_seen,
        dropped_short: students_seen - processed.len(),
        truncated: processed.iter().filter(|(_, t)| *t).count(),
        retained: processed.len(),
    };
    (processed.into_iter().map(|(s, _)| s).collect(), report)
}

/// Orders sequences by their last timestamp (ties by student id) and sends
/// the earliest `ceil(ratio * n)` to train, the rest to test.
pub fn temporal_split<S: Timestamped>(mut sequences: Vec<S>, ratio: f64) -> Result<(Vec<S>, Vec<S>)> {
    let n = sequences.len();
    let n_train = (ratio * n as f64).ceil() as usize;
    if !(0.0..=1.0).contains(&ratio) || n_train == 0 || n_train >= n {
        return Err(Error::DegenerateSplit { sequences: n, ratio });
    }
    sequences.sort_by(|a, b| {
        a.representative_timestamp()
            .cmp(&b.representative_timestamp())
            .then_with(|| a.student_id().cmp(b.student_id()))
    });
    let test = sequences.split_off(n_train);
    Ok((sequences, test))
}

/// Corpus statistics in the usual dataset-table layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub responses: usize,
    pub sequences: usize,
    pub questions: usize,
    pub concepts: usize,
}

impl CorpusStats {
    pub fn of<'a>(sequences: impl IntoIterator<Item = &'a RawSequence>) -> Self {
        let mut stats = CorpusStats::default();
        let mut questions = BTreeSet::new();
        let mut concepts = BTreeSet::new();
        for s in sequences {
            stats.sequences += 1;
            stats.responses += s.records.len();
            for r in &s.records {
                questions.insert(r.item_id.as_str());
                concepts.extend(r.concept_tags.iter().map(String::as_str));
            }
        }
        stats.questions = questions.len();
        stats.concepts = concepts.len();
        stats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_parsed: usize,
    pub malformed_rows: usize,
    pub preprocess: PreprocessReport,
    pub split_ratio: f64,
    pub overall: CorpusStats,
    pub train: CorpusStats,
    pub test: CorpusStats,
    pub max_train_timestamp: i64,
    pub min_test_timestamp: i64,
    pub difficulty_estimated_items: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    #[serde(flatten)]
    pub preprocess: PreprocessConfig,
    pub split_ratio: f64,
    pub smoothing: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            preprocess: PreprocessConfig::default(),
            split_ratio: 0.8,
            smoothing: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub train: Vec<StudentSequence>,
    pub test: Vec<StudentSequence>,
    pub difficulty: DifficultyMap,
    pub report: IngestReport,
}

fn materialize(seq: &RawSequence, split: Split, difficulty: &DifficultyMap) -> Result<StudentSequence> {
    let interactions = seq
        .records
        .iter()
        .map(|r| {
            let d = r.difficulty.unwrap_or_else(|| difficulty.get(&r.item_id));
            Interaction::new(r.exercise_text.clone(), r.concept_tags.clone(), r.correct, d)
                .map(|i| i.with_source(r.item_id.clone(), r.timestamp))
        })
        .collect::<Result<Vec<_>>>()?;
    StudentSequence::new(seq.student_id.clone(), interactions, split)
}

/// Full ingestion: preprocess, split, estimate difficulty on the training
/// side only, then build typed sequences. Rows that carry a difficulty keep
/// it; the estimate fills the gaps.
pub fn ingest(parsed: &ParsedCorpus, cfg: &IngestConfig) -> Result<IngestOutput> {
    let (sequences, pre_report) = preprocess(&parsed.records, &cfg.preprocess);
    let overall = CorpusStats::of(&sequences);
    let (train_raw, test_raw) = temporal_split(sequences, cfg.split_ratio)?;
    let difficulty = estimate_difficulty(train_raw.iter().flat_map(|s| &s.records), cfg.smoothing)?;

    let train = train_raw
        .iter()
        .map(|s| materialize(s, Split::Train, &difficulty))
        .collect::<Result<Vec<_>>>()?;
    let test = test_raw
        .iter()
        .map(|s| materialize(s, Split::Test, &difficulty))
        .collect::<Result<Vec<_>>>()?;

    let report = IngestReport {
        rows_parsed: parsed.records.len(),
        malformed_rows: parsed.malformed.len(),
        preprocess: pre_report,
        split_ratio: cfg.split_ratio,
        overall,
        train: CorpusStats::of(&train_raw),
        test: CorpusStats::of(&test_raw),
        max_train_timestamp: train_raw.iter().map(|s| s.representative_timestamp()).max().unwrap_or(0),
        min_test_timestamp: test_raw.iter().map(|s| s.representative_timestamp()).min().unwrap_or(0),
        difficulty_estimated_items: difficulty.items.len(),
    };
    Ok(IngestOutput {
        train,
        test,
        difficulty,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const HEADER: &str = "student_id,timestamp,item_id,exercise_text,concept_tags,correct\n";

    fn rec(student: &str, ts: i64, item: &str, correct: bool) -> RawRecord {
        RawRecord {
            student_id: student.into(),
            timestamp: ts,
            item_id: item.into(),
            exercise_text: format!("exercise {item}"),
            concept_tags: vec!["algebra".into()],
            correct,
            difficulty: None,
        }
    }

    #[test]
    fn parses_well_formed_rows() {
        let csv = format!(
            "{HEADER}s1,1,i1,Range of a set,statistics;range,1\ns1,2,i2,Median,statistics,0\ns2,1,i1,Range of a set,,1\n"
        );
        let parsed = parse_reader(csv.as_bytes(), &FormatConfig::default()).unwrap();
        assert_eq!(parsed.records.len(), 3);
        assert!(parsed.malformed.is_empty());
        assert_eq!(parsed.records[0].concept_tags, vec!["statistics", "range"]);
        assert!(parsed.records[2].concept_tags.is_empty());
        assert_eq!(parsed.records[1].student_id, "s1");
        assert!(!parsed.records[1].correct);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "student_id,timestamp,item_id,exercise_text,concept_tags\ns1,1,i1,x,t\n";
        match parse_reader(csv.as_bytes(), &FormatConfig::default()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "correct"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_corpus() {
        assert!(matches!(
            parse_reader(HEADER.as_bytes(), &FormatConfig::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn malformed_limit() {
        let mut csv = HEADER.to_string();
        for i in 0..99 {
            csv.push_str(&format!("s{i},1,i1,text,t,1\n"));
        }
        csv.push_str("s1,1,i1,text,t,7\n");
        // 1 of 100 bad rows is exactly at the 1% limit
        let parsed = parse_reader(csv.as_bytes(), &FormatConfig::default()).unwrap();
        assert_eq!(parsed.malformed.len(), 1);
        assert_eq!(parsed.malformed[0].line, 101);
        csv.push_str("s1,notanumber,i1,text,t,1\n");
        assert!(matches!(
            parse_reader(csv.as_bytes(), &FormatConfig::default()),
            Err(Error::MalformedRowLimitExceeded { bad: 2, total: 101, .. })
        ));
    }

    #[test]
    fn difficulty_estimates() {
        let zero_of_ten: Vec<_> = (0..10).map(|t| rec("s", t, "hard", false)).collect();
        let m = estimate_difficulty(&zero_of_ten, 1.0).unwrap();
        assert_relative_eq!(m.get("hard"), 1.0 - 1.0 / 12.0, epsilon = 1e-12);

        let all_ok: Vec<_> = (0..10).map(|t| rec("s", t, "easy", true)).collect();
        assert_eq!(estimate_difficulty(&all_ok, 0.0).unwrap().get("easy"), 0.0);

        let half: Vec<_> = (0..10).map(|t| rec("s", t, "mid", t % 2 == 0)).collect();
        assert_eq!(estimate_difficulty(&half, 0.0).unwrap().get("mid"), 0.5);

        let mut both = zero_of_ten.clone();
        both.extend(all_ok);
        let m = estimate_difficulty(&both, 0.0).unwrap();
        assert_eq!(m.get("unseen"), 0.5);
        assert!(!m.contains("unseen"));
        assert!(estimate_difficulty(&both, -1.0).is_err());
    }

    #[test]
    fn preprocess_filters_and_truncates_tail() {
        let mut records = Vec::new();
        records.extend((0..4).map(|t| rec("short", t, "i", true)));
        records.extend((0..5).map(|t| rec("exact", t, "i", true)));
        // reverse timestamp order to exercise sorting
        records.extend((0..60).rev().map(|t| rec("long", t, &format!("i{t}"), true)));
        let (seqs, report) = preprocess(&records, &PreprocessConfig::default());
        assert_eq!(report.students_seen, 3);
        assert_eq!(report.dropped_short, 1);
        assert_eq!(report.truncated, 1);
        let long = seqs.iter().find(|s| s.student_id == "long").unwrap();
        assert_eq!(long.records.len(), 50);
        assert_eq!(long.records[0].timestamp, 10);
        assert_eq!(long.records[49].timestamp, 59);
        let exact = seqs.iter().find(|s| s.student_id == "exact").unwrap();
        assert_eq!(exact.records.len(), 5);
        assert!(seqs.iter().all(|s| s.student_id != "short"));
    }

    fn seq(id: &str, last_ts: i64) -> RawSequence {
        RawSequence {
            student_id: id.into(),
            records: vec![rec(id, last_ts, "i", true)],
        }
    }

    #[test]
    fn split_is_temporal_and_leak_free() {
        let seqs: Vec<_> = (0..10).rev().map(|i| seq(&format!("s{i}"), i * 10)).collect();
        let (train, test) = temporal_split(seqs, 0.8).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let max_train = train.iter().map(|s| s.representative_timestamp()).max().unwrap();
        let min_test = test.iter().map(|s| s.representative_timestamp()).min().unwrap();
        assert!(max_train <= min_test);
    }

    #[test]
    fn split_degenerate_and_ties() {
        assert!(matches!(
            temporal_split(vec![seq("a", 1)], 0.8),
            Err(Error::DegenerateSplit { .. })
        ));
        let tied = vec![seq("c", 5), seq("a", 5), seq("b", 5)];
        let (train, test) = temporal_split(tied.clone(), 0.5).unwrap();
        let ids: Vec<_> = train.iter().chain(&test).map(|s| s.student_id.clone()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        let (train2, _) = temporal_split(tied.into_iter().rev().collect(), 0.5).unwrap();
        assert_eq!(train, train2);
    }

    #[test]
    fn ingest_difficulty_keys_are_train_items() {
        let mut records = Vec::new();
        for s in 0..10 {
            for t in 0..6 {
                records.push(rec(&format!("s{s}"), s * 100 + t, &format!("i{s}_{t}"), t % 2 == 0));
            }
        }
        let parsed = ParsedCorpus {
            records,
            malformed: vec![],
        };
        let out = ingest(&parsed, &IngestConfig::default()).unwrap();
        assert_eq!(out.train.len(), 8);
        assert_eq!(out.test.len(), 2);
        let train_items: BTreeSet<_> = out
            .train
            .iter()
            .flat_map(|s| s.interactions().iter().map(|i| i.item_id().unwrap().to_string()))
            .collect();
        let keys: BTreeSet<_> = out.difficulty.items.keys().cloned().collect();
        assert_eq!(train_items, keys);
        assert!(out.report.max_train_timestamp <= out.report.min_test_timestamp);
        // unseen test items fall back to the global mean
        let d = out.test[0].interactions()[0].difficulty();
        assert_relative_eq!(d, out.difficulty.global_mean);
    }
}
