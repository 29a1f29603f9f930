//! End-to-end evaluation: fitting the offline artifacts, scoring a test
//! split, and running the ablation grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{build_bank, Annotator, BankConfig, BankReport, MemoryBank};
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::inference::{predict, Ablation, InferenceConfig, Pipeline, Predictor};
use crate::metrics;
use crate::model::{ClusterId, Interaction, PredictionRecord, StudentSequence};
use crate::retrieval::{build_flat_index, build_indices, Bm25Params, Indices, PartitionIndex};
use crate::schema::{fit_schema, SchemaConfig, SchemaFit, SchemaModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Predict every step of each test sequence instead of only the last.
    pub per_step: bool,
    /// Prediction workers.
    pub concurrency: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            per_step: false,
            concurrency: 4,
        }
    }
}

/// Everything inference needs, owned.
pub struct Artifacts {
    pub model: SchemaModel,
    pub bank: MemoryBank,
    pub indices: Indices,
    pub flat: PartitionIndex,
    pub provider: Box<dyn EmbeddingProvider>,
}

/// Offline stage outputs kept for reporting and persistence.
pub struct FitOutputs {
    pub artifacts: Artifacts,
    pub schema: SchemaFit,
    pub bank_report: BankReport,
}

impl Artifacts {
    pub fn new(model: SchemaModel, bank: MemoryBank, bm25: Bm25Params, provider: Box<dyn EmbeddingProvider>) -> Result<Self> {
        let indices = build_indices(&bank, bm25)?;
        let flat = build_flat_index(&bank, bm25)?;
        Ok(Artifacts {
            model,
            bank,
            indices,
            flat,
            provider,
        })
    }

    /// Schema discovery, bank construction and indexing over `train`.
    pub fn fit(
        train: &[StudentSequence],
        provider: Box<dyn EmbeddingProvider>,
        schema: &SchemaConfig,
        bank: &BankConfig,
        bm25: Bm25Params,
        annotator: &dyn Annotator,
        seed: u64,
    ) -> Result<FitOutputs> {
        let fit = fit_schema(train, &*provider, schema, seed)?;
        let (memory, bank_report) = build_bank(train, &fit, &*provider, annotator, bank)?;
        let artifacts = Artifacts::new(fit.model.clone(), memory, bm25, provider)?;
        Ok(FitOutputs {
            artifacts,
            schema: fit,
            bank_report,
        })
    }

    pub fn pipeline(&self) -> Pipeline<'_> {
        Pipeline {
            model: &self.model,
            bank: &self.bank,
            indices: &self.indices,
            flat: Some(&self.flat),
            provider: &*self.provider,
        }
    }
}

/// Aggregate results of one evaluation run. Contains no timings so that
/// identical inputs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub predictor: String,
    /// `None` when the labels hold a single class.
    pub auc: Option<f64>,
    pub acc: f64,
    pub f1: f64,
    pub n_predictions: usize,
    pub positives: usize,
    pub retrieval_calls: usize,
    pub constraint_fires: BTreeMap<String, usize>,
    pub clamped: usize,
    pub fallbacks: usize,
    /// Distinct cluster ids among all retrieved candidates.
    pub candidate_clusters: Vec<ClusterId>,
    pub notes: Vec<String>,
    pub config: InferenceConfig,
    pub per_step: bool,
}

pub struct EvalRun {
    pub report: EvalReport,
    pub records: Vec<PredictionRecord>,
}

fn jobs(test: &[StudentSequence], per_step: bool) -> Vec<(StudentSequence, Interaction)> {
    let mut out = Vec::new();
    for seq in test {
        if per_step {
            for t in 1..seq.len() {
                let history = seq.prefix(t).expect("1 <= t < len");
                out.push((history, seq.interactions()[t].clone()));
            }
        } else if let Some(pair) = seq.split_target() {
            out.push(pair);
        }
    }
    out
}

/// Predicts the final interaction of every test sequence (every step with
/// `per_step`) and aggregates the metrics. Records come back in input
/// order regardless of worker count.
pub fn evaluate_split(
    test: &[StudentSequence],
    pipe: &Pipeline<'_>,
    predictor: &dyn Predictor,
    cfg: &InferenceConfig,
    eval: &EvalConfig,
) -> Result<EvalRun> {
    cfg.validate()?;
    let jobs = jobs(test, eval.per_step);
    if jobs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(eval.concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("prediction pool: {e}")))?;
    let predictions = pool.install(|| {
        jobs.par_iter()
            .map(|(history, target)| {
                predict(history, target, pipe, predictor, cfg).map(|mut p| {
                    p.record.outcome = Some(target.correct() as u8);
                    p
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let labels: Vec<u8> = jobs.iter().map(|(_, t)| t.correct() as u8).collect();
    let scores: Vec<f64> = predictions.iter().map(|p| p.record.probability).collect();
    let mut notes = Vec::new();
    let auc = match metrics::auc(&labels, &scores) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => {
            notes.push("only one outcome class in the evaluated targets; AUC undefined".to_string());
            None
        }
        Err(e) => return Err(e),
    };
    let (acc, f1) = metrics::acc_f1(&labels, &scores, cfg.threshold)?;

    let mut constraint_fires = BTreeMap::new();
    let mut clusters = BTreeSet::new();
    for p in &predictions {
        for c in &p.record.constraints_fired {
            *constraint_fires.entry(format!("{c:?}")).or_insert(0) += 1;
        }
        clusters.extend(p.record.retrieved_clusters.iter().copied());
    }
    let records: Vec<PredictionRecord> = predictions.iter().map(|p| p.record.clone()).collect();
    let report = EvalReport {
        variant: cfg.ablation.name(),
        predictor: predictor.name().to_string(),
        auc,
        acc,
        f1,
        n_predictions: records.len(),
        positives: labels.iter().filter(|&&l| l == 1).count(),
        retrieval_calls: predictions.iter().map(|p| p.retrieval_calls).sum(),
        constraint_fires,
        clamped: records.iter().filter(|r| r.clamped).count(),
        fallbacks: records.iter().filter(|r| r.fallback).count(),
        candidate_clusters: clusters.into_iter().collect(),
        notes,
        config: *cfg,
        per_step: eval.per_step,
    };
    Ok(EvalRun { report, records })
}

/// Writes the flat per-prediction view.
pub fn write_predictions_csv<W: Write>(out: W, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "student_id",
        "probability",
        "raw_probability",
        "label",
        "outcome",
        "constraints_fired",
        "retrieved_ids",
    ])?;
    for r in records {
        let fired: Vec<String> = r.constraints_fired.iter().map(|c| format!("{c:?}")).collect();
        let ids: Vec<String> = r.retrieved_ids.iter().map(u64::to_string).collect();
        w.write_record([
            r.student_id.clone(),
            r.probability.to_string(),
            r.raw_probability.to_string(),
            r.label.to_string(),
            r.outcome.map(|o| o.to_string()).unwrap_or_default(),
            fired.join(";"),
            ids.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Full pipeline first, then the single-component variants.
    pub rows: Vec<EvalReport>,
}

impl AblationReport {
    pub fn get(&self, variant: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Fixed-width comparison table with AUC deltas against the full
    /// pipeline.
    pub fn table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "   n/a".to_string(), |x| format!("{x:.4}"));
        let full_auc = self.rows.first().and_then(|r| r.auc);
        let mut s = format!(
            "{:<14} {:>7} {:>7} {:>7} {:>9} {:>7} {:>9}\n",
            "variant", "auc", "acc", "f1", "d_auc", "fires", "retrieval"
        );
        for r in &self.rows {
            let delta = match (full_auc, r.auc) {
                (Some(f), Some(a)) => format!("{:+.4}", a - f),
                _ => "n/a".into(),
            };
            let _ = writeln!(
                s,
                "{:<14} {:>7} {:>7.4} {:>7.4} {:>9} {:>7} {:>9}",
                r.variant,
                fmt(r.auc),
                r.acc,
                r.f1,
                delta,
                r.constraint_fires.values().sum::<usize>(),
                r.retrieval_calls
            );
        }
        s
    }
}

/// Runs the full pipeline and each single-component ablation.
pub fn run_ablations(
    test: &[StudentSequence],
    pipe: &Pipeline<'_>,
    predictor: &dyn Predictor,
    base: &InferenceConfig,
    eval: &EvalConfig,
) -> Result<AblationReport> {
    let variants = std::iter::once(Ablation::FULL).chain(Ablation::variants().into_iter().map(|(_, a)| a));
    let rows = variants
        .map(|ablation| {
            let cfg = InferenceConfig { ablation, ..*base };
            evaluate_split(test, pipe, predictor, &cfg, eval).map(|r| r.report)
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport { rows })
}
