//! End-to-end checks through the public library API on the bundled toy
//! corpus.

use std::path::PathBuf;

use merit_core::bank::{append_entries, make_entry, rule_annotate, RuleAnnotator};
use merit_core::eval::{evaluate_split, write_predictions_csv, Artifacts, EvalConfig, FitOutputs};
use merit_core::ingest::{ingest, parse_corpus, IngestOutput};
use merit_core::inference::HeuristicPredictor;
use merit_core::retrieval::build_indices;
use merit_core::schema::assign;
use merit_core::synth::ToyManifest;
use merit_core::{Config, Split};

fn toy() -> (Config, IngestOutput) {
    let cfg = Config::default();
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy.csv");
    let parsed = parse_corpus(&path, &cfg.ingest.format).unwrap();
    let out = ingest(&parsed, &cfg.ingest.ingest).unwrap();
    (cfg, out)
}

fn fit(cfg: &Config, out: &IngestOutput) -> FitOutputs {
    Artifacts::fit(
        &out.train,
        cfg.embedding_provider().unwrap(),
        &cfg.schema,
        &cfg.bank,
        cfg.bm25,
        &RuleAnnotator,
        cfg.seed,
    )
    .unwrap()
}

#[test]
fn ingest_matches_manifest() {
    let (_, out) = toy();
    let manifest: ToyManifest = serde_json::from_str(
        &std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/toy_manifest.json"))
            .unwrap(),
    )
    .unwrap();
    let r = &out.report;
    assert_eq!(r.rows_parsed, manifest.rows);
    assert_eq!(r.preprocess.dropped_short, manifest.dropped_short);
    assert_eq!(r.preprocess.truncated, manifest.truncated);
    assert_eq!(r.overall.sequences, manifest.retained_sequences);
    assert_eq!(r.overall.responses, manifest.responses_after_truncation);
    assert_eq!(r.overall.questions, manifest.questions);
    assert_eq!(r.overall.concepts, manifest.concepts);
    assert!(r.max_train_timestamp <= r.min_test_timestamp);
    assert!(out.train.iter().all(|s| s.split() == Split::Train));
    assert!(out.test.iter().all(|s| s.split() == Split::Test));
    for s in out.train.iter().chain(&out.test) {
        assert!((5..=50).contains(&s.len()));
    }
}

#[test]
fn evaluation_ignores_worker_count() {
    let (cfg, out) = toy();
    let arts = fit(&cfg, &out).artifacts;
    let icfg = cfg.inference_config();
    let run = |concurrency| {
        let eval = EvalConfig { per_step: true, concurrency };
        evaluate_split(&out.test, &arts.pipeline(), &HeuristicPredictor, &icfg, &eval).unwrap()
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.records, b.records);
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    let steps: usize = out.test.iter().map(|s| s.len() - 1).sum();
    assert_eq!(a.report.n_predictions, steps);

    let mut csv = Vec::new();
    write_predictions_csv(&mut csv, &a.records).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), steps + 1);
}

#[test]
fn refitting_is_reproducible() {
    let (cfg, out) = toy();
    let (a, b) = (fit(&cfg, &out), fit(&cfg, &out));
    assert_eq!(a.schema.model, b.schema.model);
    assert_eq!(a.artifacts.bank.entries(), b.artifacts.bank.entries());
    assert_eq!(a.artifacts.indices, b.artifacts.indices);
}

#[test]
fn append_rebuilds_only_touched_partitions() {
    let (cfg, out) = toy();
    let Artifacts {
        model,
        bank,
        mut indices,
        provider,
        ..
    } = fit(&cfg, &out).artifacts;
    let fresh = out.test[0].clone().with_split(Split::Train);
    let cluster = assign(&fresh, &model, &*provider).unwrap().cluster_id;
    let (history, target) = fresh.split_target().unwrap();
    let entry = make_entry(&fresh, cluster, rule_annotate(&history, &target, target.correct()), &*provider).unwrap();

    let before = indices.clone();
    let (next, touched) = append_entries(&bank, vec![entry]).unwrap();
    assert_eq!(touched.len(), 1);
    assert_eq!(next.len(), bank.len() + 1);
    indices.rebuild(&next, &touched).unwrap();
    for (c, idx) in indices.partitions() {
        if touched.contains(c) {
            assert_eq!(idx.builds(), 2);
            assert!(idx.entry_ids().contains(&bank.next_entry_id()));
        } else {
            assert_eq!(Some(idx), before.partition(*c));
        }
    }
    // an incremental rebuild agrees with indexing the new bank from scratch
    let scratch = build_indices(&next, cfg.bm25).unwrap();
    for (c, idx) in scratch.partitions() {
        let inc = indices.partition(*c).unwrap();
        assert_eq!(idx.entry_ids(), inc.entry_ids());
        assert_eq!(idx.sparse(), inc.sparse());
    }
}
