//! The interpretative memory bank: prototype selection, annotation and
//! persistence of paradigm entries.

mod annotate;

pub use annotate::{annotation_prompt, llm_annotate, rule_annotate, Annotator, LlmAnnotator, RuleAnnotator};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embed::{embed_sequence, embed_sequences, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::model::{ClusterId, Interaction, MemoryEntry, Split, StudentSequence};
use crate::num;
use crate::schema::{MemberRecord, SchemaFit, SchemaModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankConfig {
    /// Prototypes per cluster (and for the generic pool).
    pub k_bank: usize,
    /// Annotation calls in flight.
    pub concurrency: usize,
    /// Minimum fraction of entries the configured annotator must handle.
    pub min_success: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            k_bank: 100,
            concurrency: 4,
            min_success: 0.5,
        }
    }
}

/// Immutable snapshot of the bank. Entries are shared so retrieval results
/// can hold on to them cheaply.
#[derive(Debug, Clone, Default)]
pub struct MemoryBank {
    entries: Vec<Arc<MemoryEntry>>,
    by_id: HashMap<u64, usize>,
    num_clusters: usize,
}

impl MemoryBank {
    /// `num_clusters` is the schema's K; entries must carry ids `< K` or
    /// GENERIC, and unique entry ids.
    pub fn new(entries: Vec<MemoryEntry>, num_clusters: usize) -> Result<Self> {
        let mut bank = MemoryBank {
            entries: Vec::with_capacity(entries.len()),
            by_id: HashMap::with_capacity(entries.len()),
            num_clusters,
        };
        for e in entries {
            if let ClusterId::Cluster(k) = e.cluster_id() {
                if k as usize >= num_clusters {
                    return Err(Error::invalid(
                        "memory entry",
                        format!("entry {} has cluster {k} but K = {num_clusters}", e.entry_id()),
                    ));
                }
            }
            bank.push(Arc::new(e))?;
        }
        Ok(bank)
    }

    fn push(&mut self, e: Arc<MemoryEntry>) -> Result<()> {
        if self.by_id.insert(e.entry_id(), self.entries.len()).is_some() {
            return Err(Error::invalid("memory bank", format!("duplicate entry id {}", e.entry_id())));
        }
        self.entries.push(e);
        Ok(())
    }

    pub fn entries(&self) -> &[Arc<MemoryEntry>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn get(&self, entry_id: u64) -> Option<&Arc<MemoryEntry>> {
        self.by_id.get(&entry_id).map(|&i| &self.entries[i])
    }

    /// Entries of one partition, in bank order.
    pub fn partition(&self, cluster: ClusterId) -> Vec<Arc<MemoryEntry>> {
        self.entries.iter().filter(|e| e.cluster_id() == cluster).cloned().collect()
    }

    /// Partitions with at least one entry.
    pub fn clusters(&self) -> BTreeSet<ClusterId> {
        self.entries.iter().map(|e| e.cluster_id()).collect()
    }

    pub fn next_entry_id(&self) -> u64 {
        self.entries.iter().map(|e| e.entry_id() + 1).max().unwrap_or(0)
    }

    /// One JSON object per line, in bank order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<&MemoryEntry> = self.entries.iter().map(|e| e.as_ref()).collect();
        jsonl::write_jsonl(path, &rows)
    }

    pub fn load(path: &Path, num_clusters: usize) -> Result<Self> {
        MemoryBank::new(jsonl::read_jsonl(path)?, num_clusters)
    }
}

/// Picks, per cluster, the `k_bank` members closest to the centroid (all of
/// them if fewer), and for the generic pool the `k_bank` members of the
/// whole training set closest to the global mean. Ties go to the lower
/// student id. A student may be chosen for both its cluster and the generic
/// pool. Members with fewer than two interactions cannot be split into
/// history and target and are skipped.
pub fn select_prototypes(
    members: &[MemberRecord],
    model: &SchemaModel,
    k_bank: usize,
    eligible: impl Fn(&str) -> bool,
) -> BTreeMap<ClusterId, Vec<String>> {
    let mut pools: BTreeMap<ClusterId, Vec<(f64, &str)>> = BTreeMap::new();
    for m in members.iter().filter(|m| eligible(&m.assignment.student_id)) {
        let id = m.assignment.student_id.as_str();
        if let ClusterId::Cluster(_) = m.assignment.cluster_id {
            pools
                .entry(m.assignment.cluster_id)
                .or_default()
                .push((m.assignment.distance_to_centroid, id));
        }
        let g = num::cosine_distance(&m.reduced, &model.generic_centroid);
        pools.entry(ClusterId::Generic).or_default().push((g, id));
    }
    pools
        .into_iter()
        .map(|(k, mut pool)| {
            pool.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1)));
            pool.truncate(k_bank);
            (k, pool.into_iter().map(|(_, id)| id.to_string()).collect())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankReport {
    pub entries: usize,
    pub annotated: usize,
    pub fallback: usize,
    pub annotator: String,
    pub per_cluster: BTreeMap<String, usize>,
}

/// Builds a train-only entry: target is the last interaction, history the
/// rest, and the embedding indexes the history. The entry id is a
/// placeholder until the entry joins a bank.
pub fn make_entry(
    seq: &StudentSequence,
    cluster: ClusterId,
    annotation: crate::model::Annotation,
    provider: &dyn EmbeddingProvider,
) -> Result<MemoryEntry> {
    let (history, target) = split_for_entry(seq)?;
    let embedding = embed_sequence(&history, provider)?;
    let outcome = target.correct();
    MemoryEntry::new(0, history, target, outcome, annotation, embedding, cluster)
}

fn split_for_entry(seq: &StudentSequence) -> Result<(StudentSequence, Interaction)> {
    if seq.split() != Split::Train {
        return Err(Error::invalid(
            "memory entry",
            format!("student {} is not from the training split", seq.student_id()),
        ));
    }
    seq.split_target().ok_or_else(|| {
        Error::invalid(
            "memory entry",
            format!("student {} needs at least two interactions", seq.student_id()),
        )
    })
}

/// Selects prototypes, annotates them with bounded parallelism and
/// assembles the bank. Entry ids run over clusters in ascending order, then
/// the generic pool, each in prototype order.
///
/// An entry whose annotation fails falls back to the rule annotator and is
/// flagged; the build fails with `BankBuildFailed` when fewer than
/// `min_success` of the entries were annotated by `annotator` itself.
pub fn build_bank(
    train: &[StudentSequence],
    fit: &SchemaFit,
    provider: &dyn EmbeddingProvider,
    annotator: &dyn Annotator,
    cfg: &BankConfig,
) -> Result<(MemoryBank, BankReport)> {
    build_bank_from(train, &fit.model, &fit.members, provider, annotator, cfg)
}

/// [`build_bank`] from a persisted schema model and its member records.
pub fn build_bank_from(
    train: &[StudentSequence],
    model: &SchemaModel,
    members: &[MemberRecord],
    provider: &dyn EmbeddingProvider,
    annotator: &dyn Annotator,
    cfg: &BankConfig,
) -> Result<(MemoryBank, BankReport)> {
    let by_id: BTreeMap<&str, &StudentSequence> = train.iter().map(|s| (s.student_id(), s)).collect();
    if let Some(s) = train.iter().find(|s| s.split() != Split::Train) {
        return Err(Error::invalid(
            "bank input",
            format!("student {} is not from the training split", s.student_id()),
        ));
    }
    let protos = select_prototypes(members, model, cfg.k_bank, |id| {
        by_id.get(id).is_some_and(|s| s.len() >= 2)
    });

    let mut jobs: Vec<(ClusterId, StudentSequence, Interaction)> = Vec::new();
    for (cluster, ids) in &protos {
        for id in ids {
            let (history, target) = split_for_entry(by_id[id.as_str()])?;
            jobs.push((*cluster, history, target));
        }
    }
    if jobs.is_empty() {
        return Err(Error::EmptyBank);
    }

    let histories: Vec<StudentSequence> = jobs.iter().map(|(_, h, _)| h.clone()).collect();
    let embeddings = embed_sequences(&histories, provider)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.concurrency.max(1))
        .build()
        .map_err(|e| Error::Config(format!("annotation pool: {e}")))?;
    let annotations: Vec<(crate::model::Annotation, bool)> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(_, history, target)| match annotator.annotate(history, target, target.correct()) {
                Ok(a) => (a, true),
                Err(e) => {
                    tracing::warn!(student = history.student_id(), error = %e, "annotation failed, using rules");
                    (rule_annotate(history, target, target.correct()).with_fallback(true), false)
                }
            })
            .collect()
    });

    let annotated = annotations.iter().filter(|(_, ok)| *ok).count();
    let total = jobs.len();
    if (annotated as f64) < cfg.min_success * total as f64 {
        return Err(Error::BankBuildFailed {
            succeeded: annotated,
            total,
        });
    }

    let mut per_cluster: BTreeMap<String, usize> = BTreeMap::new();
    let entries = jobs
        .into_iter()
        .zip(embeddings)
        .zip(annotations)
        .enumerate()
        .map(|(i, (((cluster, history, target), emb), (ann, _)))| {
            *per_cluster.entry(cluster.to_string()).or_default() += 1;
            let outcome = target.correct();
            MemoryEntry::new(i as u64, history, target, outcome, ann, emb, cluster)
        })
        .collect::<Result<Vec<_>>>()?;

    let bank = MemoryBank::new(entries, model.k())?;
    let report = BankReport {
        entries: total,
        annotated,
        fallback: total - annotated,
        annotator: annotator.name().to_string(),
        per_cluster,
    };
    Ok((bank, report))
}

/// Returns a new snapshot with `new_entries` appended under fresh ids, plus
/// the set of partitions that changed. Entries naming a cluster the schema
/// does not have are stored under GENERIC.
pub fn append_entries(bank: &MemoryBank, new_entries: Vec<MemoryEntry>) -> Result<(MemoryBank, BTreeSet<ClusterId>)> {
    let mut next = bank.clone();
    let mut touched = BTreeSet::new();
    for (id, e) in (bank.next_entry_id()..).zip(new_entries) {
        let cluster = match e.cluster_id() {
            ClusterId::Cluster(k) if k as usize >= bank.num_clusters => ClusterId::Generic,
            c => c,
        };
        touched.insert(cluster);
        next.push(Arc::new(e.relabel(id, cluster)))?;
    }
    Ok((next, touched))
}
