//! Acceptance checks, one line per criterion. Runs as a plain binary
//! (`harness = false`) so the lines always reach the terminal; exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use merit_core::bank::{append_entries, make_entry, rule_annotate, MemoryBank, RuleAnnotator};
use merit_core::embed::HashingProvider;
use merit_core::eval::{Artifacts, FitOutputs};
use merit_core::inference::{compute_delta, difficulty_tag, FixedPredictor};
use merit_core::ingest::{ingest, parse_corpus};
use merit_core::model::{DeltaMode, EmbeddingVector, SpikeConfig};
use merit_core::retrieval::{
    build_indices, fuse_and_rank, retrieve, retrieve_embedded, search_index, Bm25Params, Bm25Stats, RetrievalConfig,
};
use merit_core::schema::{ctfidf, ClusterParams, CtfidfTable, ReducerParams, SchemaModel};
use merit_core::synth::{case_study, CaseStudy, ToyManifest};
use merit_core::text::sequence_tokens;
use merit_core::{
    predict, Annotation, ClusterId, Config, Constraint, DifficultyTag, InferenceConfig, Interaction, KeyPattern,
    MemoryEntry, RetrievalCandidate, Split, StudentSequence,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

const TOL: f64 = 1e-9;

const VOCAB: &[&str] = &[
    "algebra", "fraction", "median", "range", "venn", "circle", "area", "angle", "ratio", "linear", "prime", "factor",
    "decimal", "percent", "volume", "graph", "slope", "mean", "mode", "integer", "equation", "triangle", "probability",
    "square", "root", "perimeter", "sequence", "vector", "matrix", "symmetry",
];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    (0..n).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect()
}

// ---------------------------------------------------------------- oracles

fn ctfidf_oracle(docs: &BTreeMap<u32, Vec<Vec<String>>>, cluster: u32, word: &str) -> f64 {
    let mut tf = 0usize;
    for doc in &docs[&cluster] {
        for t in doc {
            if t == word {
                tf += 1;
            }
        }
    }
    let mut f_w = 0usize;
    let mut total = 0usize;
    for ds in docs.values() {
        for doc in ds {
            for t in doc {
                total += 1;
                if t == word {
                    f_w += 1;
                }
            }
        }
    }
    if tf == 0 {
        return 0.0;
    }
    let a = total as f64 / docs.len() as f64;
    tf as f64 * (1.0 + a / f_w as f64).ln()
}

/// Scores every document of `docs` for `query` straight from the formula.
fn bm25_oracle(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|x| x.len()).sum::<usize>() as f64 / n;
    let df: Vec<f64> = query.iter().map(|q| docs.iter().filter(|doc| doc.contains(q)).count() as f64).collect();
    docs.iter()
        .map(|doc| {
            let mut score = 0.0;
            for (q, &df) in query.iter().zip(&df) {
                let tf = doc.iter().filter(|t| *t == q).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                let len_norm = if avgdl > 0.0 { doc.len() as f64 / avgdl } else { 0.0 };
                score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len_norm));
            }
            score
        })
        .collect()
}

/// Spreadsheet-style fusion: fill, normalize per column, combine, rank.
fn fusion_oracle(dense: &[(u64, f64)], sparse: &[(u64, f64)], alpha: f64, n: usize) -> Vec<(u64, f64)> {
    let mut ids: Vec<u64> = dense.iter().chain(sparse).map(|x| x.0).collect();
    ids.sort();
    ids.dedup();
    let lookup = |side: &[(u64, f64)], id: u64| side.iter().find(|x| x.0 == id).map(|x| x.1);
    let side_min = |side: &[(u64, f64)]| {
        if side.is_empty() {
            0.0
        } else {
            side.iter().map(|x| x.1).fold(f64::INFINITY, f64::min)
        }
    };
    let column = |side: &[(u64, f64)]| -> Vec<f64> {
        let raw: Vec<f64> = ids.iter().map(|&id| lookup(side, id).unwrap_or(side_min(side))).collect();
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        raw.iter().map(|&x| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 }).collect()
    };
    let (d, s) = (column(dense), column(sparse));
    let mut rows: Vec<(u64, f64)> = ids.iter().enumerate().map(|(i, &id)| (id, alpha * d[i] + (1.0 - alpha) * s[i])).collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    rows.truncate(n);
    rows
}

fn auc_oracle(labels: &[u8], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn delta_oracle(hard_outcomes: &[bool]) -> f64 {
    if hard_outcomes.is_empty() {
        return 0.5;
    }
    let mean = hard_outcomes.iter().filter(|&&o| o).count() as f64 / hard_outcomes.len() as f64;
    mean.clamp(0.2, 0.6)
}

fn top_m(mut scored: Vec<(u64, f64)>, m: usize) -> Vec<(u64, f64)> {
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(m);
    scored
}

// ---------------------------------------------------------------- helpers

fn annotation() -> Annotation {
    Annotation::new("state", KeyPattern::SolidMastery, "context", "reasoning", "summary").unwrap()
}

fn random_history(rng: &mut ChaCha8Rng, id: &str, len: usize, split: Split) -> StudentSequence {
    let its = (0..len)
        .map(|_| {
            let n = rng.random_range(1..=3);
            let text = words(rng, n).join(" ");
            let tags = words(rng, 1);
            Interaction::new(text, tags, rng.random_bool(0.6), rng.random_range(0.0..=1.0)).unwrap()
        })
        .collect();
    StudentSequence::new(id, its, split).unwrap()
}

fn candidate(id: u64, target_d: f64, outcome: bool) -> RetrievalCandidate {
    let history = StudentSequence::new(format!("s{id}"), vec![Interaction::new("Range", vec![], true, 0.1).unwrap(); 5], Split::Train).unwrap();
    let target = Interaction::new("Median", vec![], outcome, target_d).unwrap();
    let emb = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
    let entry = MemoryEntry::new(id, history, target, outcome, annotation(), emb, ClusterId::Generic).unwrap();
    RetrievalCandidate {
        entry: Arc::new(entry),
        dense_score: 1.0,
        sparse_score: 1.0,
        fused_score: 1.0,
    }
}

fn case_artifacts() -> Result<Artifacts, String> {
    let case = case_study();
    let cfg = Config::default();
    let FitOutputs { artifacts, .. } = Artifacts::fit(
        &case.peers,
        Box::new(HashingProvider::new(256)),
        &CaseStudy::schema_config(),
        &merit_core::bank::BankConfig {
            k_bank: 8,
            ..cfg.bank.clone()
        },
        Bm25Params::default(),
        &RuleAnnotator,
        42,
    )
    .map_err(|e| format!("fitting case-study artifacts: {e}"))?;
    Ok(artifacts)
}

fn merit(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_merit"))
        .args(args)
        .output()
        .map_err(|e| format!("spawning merit: {e}"))
}

fn merit_ok(args: &[&str]) -> Result<std::process::Output, String> {
    let out = merit(args)?;
    if !out.status.success() {
        return Err(format!(
            "`merit {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ));
    }
    Ok(out)
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("parsing {}: {e}", path.display()))
}

fn read_sequences(path: &Path) -> Result<Vec<StudentSequence>, String> {
    fs::read_to_string(path)
        .map_err(|e| format!("reading {}: {e}", path.display()))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| format!("parsing {}: {e}", path.display())))
        .collect()
}

// ---------------------------------------------------------------- criteria

fn formula_oracles() -> Outcome {
    const INSTANCES: usize = 200;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut compared = 0usize;

    for i in 0..INSTANCES {
        let k = rng.random_range(1..=5u32);
        let budget = rng.random_range(1..=50usize);
        let mut docs: BTreeMap<u32, Vec<Vec<String>>> = (0..k).map(|c| (c, Vec::new())).collect();
        for _ in 0..budget {
            let c = rng.random_range(0..k);
            docs.get_mut(&c).unwrap().push(words(&mut rng, 1));
        }
        let table: CtfidfTable<f64> = ctfidf(&docs);
        for c in 0..k {
            for w in VOCAB {
                let (got, want) = (table.weight(c, w), ctfidf_oracle(&docs, c, w));
                ensure(close(got, want), || format!("c-TF-IDF instance {i}: W({w}, {c}) = {got}, oracle {want}"))?;
                compared += 1;
            }
        }
    }

    for i in 0..INSTANCES {
        let n_docs = rng.random_range(1..=50usize);
        let docs: Vec<Vec<String>> = (0..n_docs)
            .map(|_| {
                let len = rng.random_range(0..=12);
                words(&mut rng, len)
            })
            .collect();
        let (k1, b) = if i % 2 == 0 { (1.5, 0.75) } else { (rng.random_range(0.5..2.5), rng.random_range(0.0..=1.0)) };
        let stats = Bm25Stats::build(&docs, Bm25Params { k1, b });
        let nq = rng.random_range(1..=4);
        let query = words(&mut rng, nq);
        let oracle = bm25_oracle(&docs, &query, k1, b);
        for (d, &want) in oracle.iter().enumerate() {
            let got = stats.score(&query, d);
            ensure(close(got, want), || format!("BM25 instance {i}: doc {d} = {got}, oracle {want}"))?;
            compared += 1;
        }
    }

    for i in 0..INSTANCES {
        let side = |rng: &mut ChaCha8Rng| -> Vec<(u64, f64)> {
            let len = rng.random_range(0..=25usize);
            rand::seq::index::sample(rng, 50, len)
                .into_iter()
                .map(|id| {
                    let id = id as u64;
                    let s = if rng.random_bool(0.2) { 0.5 } else { rng.random_range(0.0..3.0) };
                    (id, s)
                })
                .collect()
        };
        let (dense, sparse) = (side(&mut rng), side(&mut rng));
        if dense.is_empty() && sparse.is_empty() {
            continue;
        }
        let alpha = if i % 2 == 0 { 0.7 } else { rng.random_range(0.0..=1.0) };
        let n = rng.random_range(1..=10);
        let got = fuse_and_rank(&dense, &sparse, alpha, n).map_err(|e| format!("fusion instance {i}: {e}"))?;
        let want = fusion_oracle(&dense, &sparse, alpha, n);
        ensure(got.len() == want.len(), || format!("fusion instance {i}: {} results, oracle {}", got.len(), want.len()))?;
        for (g, w) in got.iter().zip(&want) {
            ensure(g.entry_id == w.0 && close(g.fused, w.1), || {
                format!("fusion instance {i}: got ({}, {}), oracle ({}, {})", g.entry_id, g.fused, w.0, w.1)
            })?;
            ensure((g.fused - (alpha * g.dense + (1.0 - alpha) * g.sparse)).abs() <= 1e-12, || {
                format!("fusion instance {i}: fused is not the convex combination")
            })?;
            compared += 1;
        }
    }

    for i in 0..INSTANCES {
        let n = rng.random_range(2..=50usize);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        // coarse scores so ties are common
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
        let got = merit_core::metrics::auc(&labels, &scores).map_err(|e| format!("AUC instance {i}: {e}"))?;
        let want = auc_oracle(&labels, &scores);
        ensure(close(got, want), || format!("AUC instance {i}: {got}, oracle {want}"))?;
        compared += 1;
    }

    for i in 0..INSTANCES {
        let n = rng.random_range(0..=50usize);
        let mut hard = Vec::new();
        let cands: Vec<RetrievalCandidate> = (0..n as u64)
            .map(|id| {
                let d = match rng.random_range(0..4) {
                    0 => 0.7,
                    1 => 0.6999,
                    _ => rng.random_range(0.0..=1.0),
                };
                let outcome = rng.random_bool(0.4);
                if d >= 0.7 {
                    hard.push(outcome);
                }
                candidate(id, d, outcome)
            })
            .collect();
        let (got, want) = (compute_delta(&cands, 0.5), delta_oracle(&hard));
        ensure(close(got, want), || format!("delta instance {i}: {got}, oracle {want}"))?;
        compared += 1;
    }

    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:.2?}, limit 10s"))?;
    Ok(format!("{INSTANCES} instances per formula, {compared} values within 1e-9 in {elapsed:.2?}"))
}

fn retrieval_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = RetrievalConfig::default();
    let dim = 16;
    let (mut banks, mut queries) = (0usize, 0usize);
    let mut sizes = Vec::new();
    let random_unit = |rng: &mut ChaCha8Rng| {
        EmbeddingVector::normalized((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    for b in 0..30 {
        let size = if b == 0 { 1000 } else { rng.random_range(1..=1000usize) };
        let k = rng.random_range(1..=6usize);
        let centroids: Vec<Vec<f64>> = (0..k).map(|_| random_unit(&mut rng).into_inner()).collect();
        let model = SchemaModel {
            seed: 0,
            reducer_params: ReducerParams::Identity { dimension: dim },
            centroids: centroids.clone(),
            generic_centroid: random_unit(&mut rng).into_inner(),
            keywords: vec![Vec::new(); k],
            cluster_params: ClusterParams::default(),
            provider_name: "random".into(),
            dimension: dim,
            min_len_for_routing: 5,
        };
        let nearest = |v: &[f64]| -> u32 {
            let mut best = (0u32, f64::NEG_INFINITY);
            for (i, c) in centroids.iter().enumerate() {
                let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt() * v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let cos = c.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / norm;
                if cos > best.1 {
                    best = (i as u32, cos);
                }
            }
            best.0
        };
        let entries: Vec<MemoryEntry> = (0..size as u64)
            .map(|id| {
                let emb = random_unit(&mut rng);
                let cluster = if rng.random_bool(0.15) {
                    ClusterId::Generic
                } else {
                    ClusterId::Cluster(nearest(emb.as_slice()))
                };
                let len = rng.random_range(1..=8);
                let history = random_history(&mut rng, &format!("s{id}"), len, Split::Train);
                let target = Interaction::new("target", vec![], true, 0.5).unwrap();
                MemoryEntry::new(id, history, target, true, annotation(), emb, cluster).unwrap()
            })
            .collect();
        let bank = MemoryBank::new(entries, k).map_err(|e| format!("bank {b}: {e}"))?;
        let indices = build_indices(&bank, Bm25Params::default()).map_err(|e| format!("bank {b}: {e}"))?;
        banks += 1;
        sizes.push(size);

        for q in 0..10 {
            let len = rng.random_range(1..=10);
            let query = random_history(&mut rng, "query", len, Split::Test);
            let h = random_unit(&mut rng);
            let got = retrieve_embedded(&query, &h, &model, &indices, &bank, &cfg)
                .map_err(|e| format!("bank {b} query {q}: {e}"))?;

            // exhaustive scan of the routed partition
            let mut routed = if len >= 5 { ClusterId::Cluster(nearest(h.as_slice())) } else { ClusterId::Generic };
            let mut members: Vec<&Arc<MemoryEntry>> = bank.entries().iter().filter(|e| e.cluster_id() == routed).collect();
            if members.is_empty() {
                routed = ClusterId::Generic;
                members = bank.entries().iter().filter(|e| e.cluster_id() == routed).collect();
            }
            ensure(got.searched == routed, || format!("bank {b} query {q}: searched {} but oracle routes to {routed}", got.searched))?;
            let dense: Vec<(u64, f64)> = members
                .iter()
                .map(|e| {
                    let s: f64 = e.embedding().as_slice().iter().zip(h.as_slice()).map(|(a, b)| a * b).sum();
                    (e.entry_id(), s.clamp(-1.0, 1.0))
                })
                .collect();
            let docs: Vec<Vec<String>> = members.iter().map(|e| sequence_tokens(e.history())).collect();
            let qt = sequence_tokens(&query);
            let sparse: Vec<(u64, f64)> =
                members.iter().map(|e| e.entry_id()).zip(bm25_oracle(&docs, &qt, 1.5, 0.75)).collect();
            let want = fusion_oracle(&top_m(dense, cfg.m_per_side), &top_m(sparse, cfg.m_per_side), cfg.alpha, cfg.n);
            let got_ids: Vec<u64> = got.candidates.iter().map(|c| c.entry.entry_id()).collect();
            let want_ids: Vec<u64> = want.iter().map(|w| w.0).collect();
            ensure(got_ids == want_ids, || {
                format!("bank {b} query {q}: routed top-{} {got_ids:?}, exhaustive {want_ids:?}", cfg.n)
            })?;
            queries += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:.2?}, limit 30s"))?;
    Ok(format!(
        "{banks} banks ({}..={} entries), {queries} queries, identical top-N in {elapsed:.2?}",
        sizes.iter().min().unwrap(),
        sizes.iter().max().unwrap()
    ))
}

fn difficulty_boundaries() -> Outcome {
    let cases = [
        (0.0, DifficultyTag::Easy),
        (0.34, DifficultyTag::Easy),
        (0.35, DifficultyTag::Medium),
        (0.6999, DifficultyTag::Medium),
        (0.70, DifficultyTag::Hard),
        (1.0, DifficultyTag::Hard),
    ];
    for (d, want) in cases {
        let got = difficulty_tag(d).map_err(|e| format!("{d}: {e}"))?;
        ensure(got == want, || format!("{d} -> {got}, expected {want}"))?;
    }
    ensure(difficulty_tag(1.01).is_err() && difficulty_tag(-0.01).is_err(), || "out-of-range difficulty accepted".into())?;
    Ok("0.34->EASY 0.35->MEDIUM 0.6999->MEDIUM 0.70->HARD".into())
}

fn spike_guarantee() -> Outcome {
    const TRIPLES: usize = 10_000;
    let arts = case_artifacts()?;
    let pipe = arts.pipeline();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut active, mut clamped) = (0usize, 0usize);
    for i in 0..TRIPLES {
        let len = rng.random_range(1..=12);
        let mut history = random_history(&mut rng, &format!("q{i}"), len, Split::Test);
        if rng.random_bool(0.5) {
            // force a streak on half the cases
            let its: Vec<Interaction> = history
                .interactions()
                .iter()
                .map(|it| Interaction::new(it.exercise_text(), it.concept_tags().to_vec(), true, it.difficulty()).unwrap())
                .collect();
            history = StudentSequence::new(history.student_id(), its, Split::Test).unwrap();
        }
        let d = match rng.random_range(0..4) {
            0 => 0.7,
            1 => 0.6999,
            _ => rng.random_range(0.0..=1.0),
        };
        let target = Interaction::new(words(&mut rng, 1).join(" "), vec![], false, d).unwrap();
        let raw = match rng.random_range(0..5) {
            0 => 1.0,
            1 => 0.0,
            _ => rng.random_range(0.0..=1.0),
        };
        let mut cfg = InferenceConfig::default();
        if rng.random_bool(0.3) {
            cfg.spike = SpikeConfig {
                delta: DeltaMode::Fixed(rng.random_range(0.05..0.95)),
                ..cfg.spike
            };
        }
        let r = predict(&history, &target, &pipe, &FixedPredictor(raw), &cfg)
            .map_err(|e| format!("triple {i}: {e}"))?
            .record;
        let its = history.interactions();
        let antecedent = its.len() >= 3 && its[its.len() - 3..].iter().all(|x| x.correct()) && d >= 0.7;
        if antecedent {
            active += 1;
            let delta = r.delta.ok_or_else(|| format!("triple {i}: antecedent holds but no delta recorded"))?;
            ensure(r.fired(Constraint::SpikeRule), || format!("triple {i}: antecedent holds but SpikeRule not recorded"))?;
            ensure(r.probability < delta, || format!("triple {i}: p {} >= delta {delta} (raw {raw})", r.probability))?;
            clamped += r.clamped as usize;
        } else {
            ensure(!r.fired(Constraint::SpikeRule) && r.probability == raw, || {
                format!("triple {i}: constraint applied without its antecedent")
            })?;
        }
    }
    Ok(format!("{TRIPLES} triples, {active} with the antecedent ({clamped} clamped), 0 violations"))
}

fn case_study_replay() -> Outcome {
    let text = fs::read_to_string(fixture("case_712.json")).map_err(|e| format!("reading case fixture: {e}"))?;
    #[derive(serde::Deserialize)]
    struct Case {
        student_id: String,
        interactions: Vec<Interaction>,
    }
    let case: Case = serde_json::from_str(&text).map_err(|e| format!("parsing case fixture: {e}"))?;
    let mut its = case.interactions;
    let target = its.pop().ok_or("empty case fixture")?;
    let history = StudentSequence::new(case.student_id, its, Split::Test).map_err(|e| e.to_string())?;
    ensure(history.len() == 5 && history.interactions().iter().all(|i| i.correct() && i.difficulty() == 0.0), || {
        "fixture history is not five correct answers at difficulty 0.0".into()
    })?;
    ensure(matches!(difficulty_tag(target.difficulty()), Ok(DifficultyTag::Hard)), || "fixture target is not HARD".into())?;

    let arts = case_artifacts()?;
    let p = predict(&history, &target, &arts.pipeline(), &FixedPredictor(0.35), &InferenceConfig::default())
        .map_err(|e| e.to_string())?;
    let r = &p.record;
    ensure(r.label == 0, || format!("label {}", r.label))?;
    ensure(r.probability == 0.35, || format!("probability {}", r.probability))?;
    ensure(r.fired(Constraint::SpikeRule), || "SpikeRule not recorded".into())?;
    Ok(format!(
        "label 0, P=0.35, SpikeRule recorded (delta {:.2}, {} paradigms)",
        r.delta.unwrap_or(f64::NAN),
        r.paradigm_ids.len()
    ))
}

fn preprocessing_contract(tmp: &Path) -> Outcome {
    let dir = tmp.join("ingest");
    let toy = fixture("toy.csv");
    merit_ok(&["-q", "ingest", toy.to_str().unwrap(), "--artifacts", dir.to_str().unwrap()])?;
    let manifest: ToyManifest = serde_json::from_value(read_json(&fixture("toy_manifest.json"))?).map_err(|e| e.to_string())?;
    let report = read_json(&dir.join("ingest_report.json"))?;
    let train = read_sequences(&dir.join("train.jsonl"))?;
    let test = read_sequences(&dir.join("test.jsonl"))?;

    for s in train.iter().chain(&test) {
        ensure((5..=50).contains(&s.len()), || format!("{} has length {}", s.student_id(), s.len()))?;
        let ts: Vec<i64> = s.interactions().iter().filter_map(|i| i.timestamp()).collect();
        ensure(ts.len() == s.len() && ts.windows(2).all(|w| w[0] <= w[1]), || {
            format!("{} is not in temporal order", s.student_id())
        })?;
    }
    let last = |s: &StudentSequence| s.representative_timestamp().unwrap();
    let max_train = train.iter().map(last).max().ok_or("empty train split")?;
    let min_test = test.iter().map(last).min().ok_or("empty test split")?;
    ensure(max_train <= min_test, || format!("max train timestamp {max_train} > min test timestamp {min_test}"))?;
    let train_ids: BTreeSet<&str> = train.iter().map(|s| s.student_id()).collect();
    ensure(test.iter().all(|s| !train_ids.contains(s.student_id())), || "a student is in both splits".into())?;

    let overall = &report["overall"];
    let checks = [
        ("rows", report["rows_parsed"].as_u64(), manifest.rows),
        ("sequences", overall["sequences"].as_u64(), manifest.retained_sequences),
        ("responses", overall["responses"].as_u64(), manifest.responses_after_truncation),
        ("questions", overall["questions"].as_u64(), manifest.questions),
        ("concepts", overall["concepts"].as_u64(), manifest.concepts),
        ("dropped", report["preprocess"]["dropped_short"].as_u64(), manifest.dropped_short),
        ("truncated", report["preprocess"]["truncated"].as_u64(), manifest.truncated),
        ("students", report["preprocess"]["students_seen"].as_u64(), manifest.students),
    ];
    for (name, got, want) in checks {
        ensure(got == Some(want as u64), || format!("{name}: report {got:?}, manifest {want}"))?;
    }
    ensure(train.len() + test.len() == manifest.retained_sequences, || "split loses sequences".into())?;
    Ok(format!(
        "{} sequences ({} train / {} test), {} questions, {} concepts; split leak-free",
        manifest.retained_sequences,
        train.len(),
        test.len(),
        manifest.questions,
        manifest.concepts
    ))
}

fn ablation_direction(tmp: &Path) -> Outcome {
    let out = tmp.join("ablate");
    let planted = fixture("planted.csv");
    let start = Instant::now();
    merit_ok(&[
        "-q",
        "--seed",
        "42",
        "--provider",
        "offline",
        "ablate",
        "--data",
        planted.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])?;
    let elapsed = start.elapsed();
    let report = read_json(&out.join("ablation.json"))?;
    let auc = |variant: &str| -> Result<f64, String> {
        report["rows"]
            .as_array()
            .and_then(|rows| rows.iter().find(|r| r["variant"] == variant))
            .and_then(|r| r["auc"].as_f64())
            .ok_or_else(|| format!("no AUC for {variant}"))
    };
    let (full, no_logic, no_retrieval) = (auc("full")?, auc("no_logic")?, auc("no_retrieval")?);
    let summary = format!("full {full:.4}, no_logic {no_logic:.4}, no_retrieval {no_retrieval:.4} in {elapsed:.2?}");
    ensure(full - no_logic >= 0.05, || format!("full - no_logic = {:.4} < 0.05 ({summary})", full - no_logic))?;
    ensure(full - no_retrieval >= 0.05, || format!("full - no_retrieval = {:.4} < 0.05 ({summary})", full - no_retrieval))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:.2?}, limit 2 min"))?;
    Ok(summary)
}

fn determinism(tmp: &Path) -> Outcome {
    let toy = fixture("toy.csv");
    let mut runs = Vec::new();
    for i in 0..2 {
        let out = tmp.join(format!("eval{i}"));
        let o = merit_ok(&[
            "-q",
            "--seed",
            "42",
            "--provider",
            "offline",
            "evaluate",
            "--data",
            toy.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])?;
        let report = fs::read(out.join("report.json")).map_err(|e| format!("reading report: {e}"))?;
        let preds = fs::read(out.join("predictions.csv")).map_err(|e| format!("reading predictions: {e}"))?;
        runs.push((o.stdout, report, preds));
    }
    ensure(runs[0].1 == runs[1].1, || "report.json differs between runs".into())?;
    ensure(runs[0].0 == runs[1].0, || "stdout differs between runs".into())?;
    ensure(runs[0].2 == runs[1].2, || "predictions.csv differs between runs".into())?;
    Ok(format!("report.json byte-identical across runs ({} bytes)", runs[0].1.len()))
}

fn incremental_append() -> Outcome {
    let cfg = Config::default();
    let parsed = parse_corpus(&fixture("toy.csv"), &cfg.ingest.format).map_err(|e| e.to_string())?;
    let data = ingest(&parsed, &cfg.ingest.ingest).map_err(|e| e.to_string())?;
    let provider = cfg.embedding_provider().map_err(|e| e.to_string())?;
    let FitOutputs { artifacts, .. } =
        Artifacts::fit(&data.train, provider, &cfg.schema, &cfg.bank, cfg.bm25, &RuleAnnotator, cfg.seed)
            .map_err(|e| e.to_string())?;
    let Artifacts {
        model,
        bank,
        mut indices,
        provider,
        ..
    } = artifacts;
    let rcfg = cfg.inference_config().retrieval;

    // an unseen student becomes a new paradigm
    let fresh = data.test.iter().max_by_key(|s| s.len()).ok_or("no test sequences")?.clone().with_split(Split::Train);
    let assignment = merit_core::schema::assign(&fresh, &model, &*provider).map_err(|e| e.to_string())?;
    let (history, target) = fresh.split_target().ok_or("test sequence too short")?;
    let ann = rule_annotate(&history, &target, target.correct());
    let entry = make_entry(&fresh, assignment.cluster_id, ann, &*provider).map_err(|e| e.to_string())?;
    let (next, touched) = append_entries(&bank, vec![entry]).map_err(|e| e.to_string())?;
    indices.rebuild(&next, &touched).map_err(|e| e.to_string())?;
    let new_id = bank.next_entry_id();

    for old in bank.entries() {
        let kept = next.get(old.entry_id()).ok_or_else(|| format!("entry {} vanished", old.entry_id()))?;
        ensure(kept == old, || format!("entry {} changed", old.entry_id()))?;
        let part = indices
            .partition(old.cluster_id())
            .ok_or_else(|| format!("partition {} vanished", old.cluster_id()))?;
        let all = RetrievalConfig {
            n: part.len(),
            m_per_side: part.len(),
            ..rcfg
        };
        let hits = search_index(part, old.embedding(), &sequence_tokens(old.history()), &next, &all).map_err(|e| e.to_string())?;
        let pos = hits
            .iter()
            .position(|c| c.entry.entry_id() == old.entry_id())
            .ok_or_else(|| format!("entry {} not retrievable", old.entry_id()))?;
        // a self-query lands in the top N unless exact ties push it down
        let cutoff = hits[(rcfg.n - 1).min(hits.len() - 1)].fused_score;
        ensure(pos < rcfg.n || hits[pos].fused_score >= cutoff - 1e-12, || {
            format!("entry {} ranks {pos} for its own history", old.entry_id())
        })?;
    }

    // near-duplicate: same history with the final answer flipped
    let mut its = history.interactions().to_vec();
    let last = its.pop().unwrap();
    its.push(Interaction::new(last.exercise_text(), last.concept_tags().to_vec(), !last.correct(), last.difficulty()).unwrap());
    let query = StudentSequence::new("near-duplicate", its, Split::Test).unwrap();
    let got = retrieve(&query, &model, &indices, &next, &*provider, &rcfg).map_err(|e| e.to_string())?;
    let top = got.candidates.first().ok_or("no candidates")?;
    ensure(top.entry.entry_id() == new_id, || {
        format!("top candidate is {} (fused {:.3}), appended entry is {new_id}", top.entry.entry_id(), top.fused_score)
    })?;
    Ok(format!(
        "{} prior entries retrievable; near-duplicate ranks appended entry {new_id} first (fused {:.3}, partition {})",
        bank.len(),
        top.fused_score,
        got.searched
    ))
}

fn main() -> ExitCode {
    let tmp = match tempfile::tempdir() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot create a temp dir: {e}");
            return ExitCode::FAILURE;
        }
    };
    let criteria: Vec<(&str, Check)> = vec![
        ("formula oracles", Box::new(formula_oracles)),
        ("retrieval equivalence", Box::new(retrieval_equivalence)),
        ("difficulty calibration", Box::new(difficulty_boundaries)),
        ("spike rule guarantee", Box::new(spike_guarantee)),
        ("case-study replay", Box::new(case_study_replay)),
        ("preprocessing contract", Box::new(|| preprocessing_contract(tmp.path()))),
        ("ablation direction", Box::new(|| ablation_direction(tmp.path()))),
        ("determinism", Box::new(|| determinism(tmp.path()))),
        ("incremental append", Box::new(incremental_append)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} [{name}]: PASS - {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL - {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
