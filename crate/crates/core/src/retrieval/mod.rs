//! Partitioned hybrid retrieval: per-cluster exact inner-product and BM25
//! indices, centroid routing, min-max score fusion and quality filtering.

mod bm25;
mod store;

pub use bm25::{Bm25Params, Bm25Stats};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bank::MemoryBank;
use crate::embed::{embed_sequence, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::model::{ClusterId, EmbeddingVector, MemoryEntry, RetrievalCandidate, SpikeConfig, StudentSequence};
use crate::num;
use crate::schema::{ClusterAssignment, SchemaModel};
use crate::text::sequence_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub alpha: f64,
    pub n: usize,
    pub m_per_side: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            alpha: 0.7,
            n: 3,
            m_per_side: 20,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.n == 0 || self.m_per_side == 0 {
            return Err(Error::Config("retrieval n and m_per_side must be positive".into()));
        }
        Ok(())
    }
}

/// What an index covers: one bank partition, or the whole bank (used when
/// routing is disabled).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexScope {
    Partition(ClusterId),
    Flat,
}

/// Exact dense index plus BM25 statistics over the same entries, in the
/// same order.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionIndex {
    scope: IndexScope,
    entry_ids: Vec<u64>,
    dimension: usize,
    /// Row-major unit vectors, one row per entry id.
    vectors: Vec<f64>,
    sparse: Bm25Stats,
    /// How many times this partition has been (re)built.
    builds: u64,
}

fn by_score_then_id(a: &(u64, f64), b: &(u64, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

fn top_m(mut scored: Vec<(u64, f64)>, m: usize) -> Vec<(u64, f64)> {
    scored.sort_by(by_score_then_id);
    scored.truncate(m);
    scored
}

impl PartitionIndex {
    pub fn build(scope: IndexScope, entries: &[Arc<MemoryEntry>], params: Bm25Params) -> Result<Self> {
        let dimension = entries.first().map_or(0, |e| e.embedding().dimension());
        let mut vectors = Vec::with_capacity(entries.len() * dimension);
        for e in entries {
            if e.embedding().dimension() != dimension {
                return Err(Error::DimensionMismatch {
                    expected: dimension,
                    got: e.embedding().dimension(),
                });
            }
            vectors.extend_from_slice(e.embedding().as_slice());
        }
        let docs: Vec<Vec<String>> = entries.iter().map(|e| sequence_tokens(e.history())).collect();
        Ok(PartitionIndex {
            scope,
            entry_ids: entries.iter().map(|e| e.entry_id()).collect(),
            dimension,
            vectors,
            sparse: Bm25Stats::build(&docs, params),
            builds: 1,
        })
    }

    pub fn scope(&self) -> IndexScope {
        self.scope
    }

    pub fn entry_ids(&self) -> &[u64] {
        &self.entry_ids
    }

    pub fn len(&self) -> usize {
        self.entry_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry_ids.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn sparse(&self) -> &Bm25Stats {
        &self.sparse
    }

    pub fn builds(&self) -> u64 {
        self.builds
    }

    /// Exact top-`m` by inner product, descending, ties by entry id.
    pub fn dense_search(&self, query: &EmbeddingVector, m: usize) -> Result<Vec<(u64, f64)>> {
        if self.is_empty() {
            return Ok(Vec::new());
        }
        if query.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: query.dimension(),
            });
        }
        let q = query.as_slice();
        let scored = self
            .entry_ids
            .iter()
            .zip(self.vectors.chunks_exact(self.dimension))
            .map(|(&id, row)| (id, num::dot(q, row).clamp(-1.0, 1.0)))
            .collect();
        Ok(top_m(scored, m))
    }

    /// Top-`m` BM25 scores for the query tokens, descending, ties by id.
    pub fn sparse_search(&self, query_tokens: &[String], m: usize) -> Vec<(u64, f64)> {
        let scored = self.entry_ids.iter().copied().zip(self.sparse.scores(query_tokens)).collect();
        top_m(scored, m)
    }
}

/// A fused candidate before it is joined back to its entry. Scores are the
/// per-side normalized values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedScore {
    pub entry_id: u64,
    pub dense: f64,
    pub sparse: f64,
    pub fused: f64,
}

/// Merges the two result lists. An id missing from one side takes that
/// side's lowest observed score; each side is then min-max normalized over
/// the pool (a constant side becomes 0.5) and combined as
/// `alpha * dense + (1 - alpha) * sparse`. Returns the top `n`, ties by id.
pub fn fuse_and_rank(dense: &[(u64, f64)], sparse: &[(u64, f64)], alpha: f64, n: usize) -> Result<Vec<FusedScore>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut pool: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for &(id, s) in dense {
        pool.entry(id).or_default().0 = Some(s);
    }
    for &(id, s) in sparse {
        pool.entry(id).or_default().1 = Some(s);
    }
    if pool.is_empty() {
        return Err(Error::EmptyCandidatePool);
    }
    let floor = |xs: &[(u64, f64)]| xs.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let (dmin, smin) = (floor(dense), floor(sparse));
    let ids: Vec<u64> = pool.keys().copied().collect();
    let fill = |v: Option<f64>, min: f64| v.unwrap_or(if min.is_finite() { min } else { 0.0 });
    let d: Vec<f64> = pool.values().map(|v| fill(v.0, dmin)).collect();
    let s: Vec<f64> = pool.values().map(|v| fill(v.1, smin)).collect();
    let (dn, sn) = (num::min_max_normalize(&d), num::min_max_normalize(&s));

    let mut fused: Vec<FusedScore> = ids
        .into_iter()
        .enumerate()
        .map(|(i, entry_id)| FusedScore {
            entry_id,
            dense: dn[i],
            sparse: sn[i],
            fused: alpha * dn[i] + (1.0 - alpha) * sn[i],
        })
        .collect();
    fused.sort_by(|a, b| {
        b.fused
            .partial_cmp(&a.fused)
            .unwrap_or(Ordering::Equal)
            .then(a.entry_id.cmp(&b.entry_id))
    });
    fused.truncate(n);
    Ok(fused)
}

/// All partition indices of a bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Indices {
    params: Bm25Params,
    partitions: BTreeMap<ClusterId, PartitionIndex>,
}

impl Indices {
    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn partition(&self, cluster: ClusterId) -> Option<&PartitionIndex> {
        self.partitions.get(&cluster)
    }

    pub fn partitions(&self) -> impl Iterator<Item = (&ClusterId, &PartitionIndex)> {
        self.partitions.iter()
    }

    /// Rebuilds only the named partitions from `bank`; others keep their
    /// index (and build counter) untouched.
    pub fn rebuild(&mut self, bank: &MemoryBank, affected: &BTreeSet<ClusterId>) -> Result<()> {
        for &c in affected {
            let entries = bank.partition(c);
            if entries.is_empty() {
                self.partitions.remove(&c);
                continue;
            }
            let builds = self.partitions.get(&c).map_or(0, |p| p.builds);
            let mut idx = PartitionIndex::build(IndexScope::Partition(c), &entries, self.params)?;
            idx.builds = builds + 1;
            self.partitions.insert(c, idx);
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        store::save(self, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        store::load(dir)
    }
}

/// One index per non-empty partition (clusters and GENERIC).
pub fn build_indices(bank: &MemoryBank, params: Bm25Params) -> Result<Indices> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let partitions = bank
        .clusters()
        .into_iter()
        .map(|c| Ok((c, PartitionIndex::build(IndexScope::Partition(c), &bank.partition(c), params)?)))
        .collect::<Result<_>>()?;
    Ok(Indices { params, partitions })
}

/// A single index over the whole bank, for unrouted search.
pub fn build_flat_index(bank: &MemoryBank, params: Bm25Params) -> Result<PartitionIndex> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    PartitionIndex::build(IndexScope::Flat, bank.entries(), params)
}

/// Dense and sparse search of one index, fused and joined to bank entries.
pub fn search_index(
    index: &PartitionIndex,
    query: &EmbeddingVector,
    query_tokens: &[String],
    bank: &MemoryBank,
    cfg: &RetrievalConfig,
) -> Result<Vec<RetrievalCandidate>> {
    let (dense, sparse) = rayon::join(
        || index.dense_search(query, cfg.m_per_side),
        || index.sparse_search(query_tokens, cfg.m_per_side),
    );
    let fused = fuse_and_rank(&dense?, &sparse, cfg.alpha, cfg.n)?;
    fused
        .into_iter()
        .map(|f| {
            let entry = bank
                .get(f.entry_id)
                .cloned()
                .ok_or_else(|| Error::invalid("index", format!("entry {} is not in the bank", f.entry_id)))?;
            Ok(RetrievalCandidate {
                entry,
                dense_score: f.dense,
                sparse_score: f.sparse,
                fused_score: f.fused,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Retrieval {
    pub assignment: ClusterAssignment,
    /// Partition actually searched (GENERIC when the routed one is empty).
    pub searched: ClusterId,
    pub candidates: Vec<RetrievalCandidate>,
}

/// Routes the query to its schema partition and runs hybrid search there.
/// An empty routed partition falls back to GENERIC.
pub fn retrieve(
    query: &StudentSequence,
    model: &SchemaModel,
    indices: &Indices,
    bank: &MemoryBank,
    provider: &dyn EmbeddingProvider,
    cfg: &RetrievalConfig,
) -> Result<Retrieval> {
    let h = embed_sequence(query, provider)?;
    retrieve_embedded(query, &h, model, indices, bank, cfg)
}

/// [`retrieve`] with the query embedding already computed.
pub fn retrieve_embedded(
    query: &StudentSequence,
    h: &EmbeddingVector,
    model: &SchemaModel,
    indices: &Indices,
    bank: &MemoryBank,
    cfg: &RetrievalConfig,
) -> Result<Retrieval> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let assignment = model.assign_embedded(query.student_id(), query.len(), h)?;
    let (searched, index) = match indices.partition(assignment.cluster_id) {
        Some(idx) if !idx.is_empty() => (assignment.cluster_id, idx),
        _ => {
            let idx = indices.partition(ClusterId::Generic).ok_or(Error::EmptyBank)?;
            (ClusterId::Generic, idx)
        }
    };
    let tokens = sequence_tokens(query);
    let candidates = search_index(index, h, &tokens, bank, cfg)?;
    Ok(Retrieval {
        assignment,
        searched,
        candidates,
    })
}

/// Keeps candidates with `fused_score >= tau` whose history length ratio to
/// the query lies within the configured bounds. Order is preserved.
pub fn quality_filter(candidates: &[RetrievalCandidate], query_len: usize, cfg: &SpikeConfig) -> Vec<RetrievalCandidate> {
    let (low, high) = cfg.length_ratio_bounds;
    candidates
        .iter()
        .filter(|c| {
            let ratio = c.entry.history().len() as f64 / query_len.max(1) as f64;
            c.fused_score >= cfg.tau && (low..=high).contains(&ratio)
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Annotation, Interaction, KeyPattern, Split};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn entry(id: u64, cluster: ClusterId, words: &str, len: usize, emb: Vec<f64>) -> MemoryEntry {
        let its: Vec<Interaction> = (0..len)
            .map(|_| Interaction::new(words, vec![], true, 0.2).unwrap())
            .collect();
        let hist = StudentSequence::new(format!("s{id}"), its, Split::Train).unwrap();
        let target = Interaction::new("target", vec![], false, 0.9).unwrap();
        let ann = Annotation::new("k", KeyPattern::ConceptGaps, "d", "r", "s").unwrap();
        MemoryEntry::new(id, hist, target, false, ann, EmbeddingVector::normalized(emb).unwrap(), cluster).unwrap()
    }

    fn random_bank(rng: &mut ChaCha8Rng, n: usize, k: u32, dim: usize) -> MemoryBank {
        let words = ["median range", "venn diagram", "fraction sum", "algebra linear", "circle area"];
        let entries = (0..n as u64)
            .map(|id| {
                let c = if rng.random_bool(0.2) {
                    ClusterId::Generic
                } else {
                    ClusterId::Cluster(rng.random_range(0..k))
                };
                let emb = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                entry(id, c, words[rng.random_range(0..words.len())], rng.random_range(1..8), emb)
            })
            .collect();
        MemoryBank::new(entries, k as usize).unwrap()
    }

    #[test]
    fn dense_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bank = random_bank(&mut rng, 20, 1, 8);
        let idx = build_flat_index(&bank, Bm25Params::default()).unwrap();
        for _ in 0..20 {
            let q = EmbeddingVector::normalized((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let got = idx.dense_search(&q, 5).unwrap();
            let mut oracle: Vec<(u64, f64)> =
                bank.entries().iter().map(|e| (e.entry_id(), num::dot(q.as_slice(), e.embedding().as_slice()))).collect();
            oracle.sort_by(by_score_then_id);
            assert_eq!(got.iter().map(|x| x.0).collect::<Vec<_>>(), oracle[..5].iter().map(|x| x.0).collect::<Vec<_>>());
        }
        let self_q = bank.entries()[7].embedding().clone();
        let top = idx.dense_search(&self_q, 100).unwrap();
        assert_eq!(top[0].0, 7);
        assert!((top[0].1 - 1.0).abs() < 1e-6);
        assert_eq!(top.len(), 20);
    }

    #[test]
    fn fusion_boundaries() {
        let dense = [(1, 0.9), (2, 0.1)];
        let sparse = [(1, 0.0), (2, 5.0)];
        let f = fuse_and_rank(&dense, &sparse, 0.7, 3).unwrap();
        assert_eq!(f[0].entry_id, 1);
        assert!((f[0].fused - 0.7).abs() < 1e-12);
        let f = fuse_and_rank(&dense, &sparse, 1.0, 3).unwrap();
        assert_eq!(f.iter().map(|x| x.entry_id).collect::<Vec<_>>(), [1, 2]);
        assert!(matches!(fuse_and_rank(&[], &[], 0.7, 3), Err(Error::EmptyCandidatePool)));
        // constant sides normalize to 0.5
        let f = fuse_and_rank(&[(4, 0.3), (5, 0.3)], &[(4, 1.0), (5, 1.0)], 0.7, 3).unwrap();
        assert!(f.iter().all(|x| (x.fused - 0.5).abs() < 1e-12));
        assert_eq!(f[0].entry_id, 4);
    }

    #[test]
    fn missing_side_takes_observed_min() {
        let f = fuse_and_rank(&[(1, 0.8), (2, 0.2)], &[(3, 4.0), (1, 2.0)], 0.5, 5).unwrap();
        let get = |id| f.iter().find(|x| x.entry_id == id).unwrap();
        // dense: 3 -> 0.2 (min); sparse: 2 -> 2.0 (min)
        assert_eq!(get(3).dense, 0.0);
        assert_eq!(get(2).sparse, 0.0);
        assert_eq!(get(1).dense, 1.0);
    }

    #[test]
    fn routed_equals_flat_restricted_to_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bank = random_bank(&mut rng, 60, 3, 6);
        let indices = build_indices(&bank, Bm25Params::default()).unwrap();
        let cfg = RetrievalConfig::default();
        for (&c, idx) in indices.partitions() {
            let members: Vec<Arc<MemoryEntry>> = bank.partition(c);
            let sub = MemoryBank::new(members.iter().map(|e| e.as_ref().clone()).collect(), 3).unwrap();
            let flat = build_flat_index(&sub, Bm25Params::default()).unwrap();
            let q = EmbeddingVector::normalized((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let toks = vec!["median".to_string(), "area".to_string()];
            let a: Vec<u64> = search_index(idx, &q, &toks, &bank, &cfg).unwrap().iter().map(|x| x.entry.entry_id()).collect();
            let b: Vec<u64> = search_index(&flat, &q, &toks, &sub, &cfg).unwrap().iter().map(|x| x.entry.entry_id()).collect();
            assert_eq!(a, b);
            assert!(a.iter().all(|id| bank.get(*id).unwrap().cluster_id() == c));
        }
    }

    #[test]
    fn rebuild_touches_only_affected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bank = random_bank(&mut rng, 30, 2, 4);
        let mut indices = build_indices(&bank, Bm25Params::default()).unwrap();
        let new = entry(0, ClusterId::Cluster(0), "fresh words", 3, vec![1.0, 0.0, 0.0, 0.0]);
        let (bank2, touched) = crate::bank::append_entries(&bank, vec![new]).unwrap();
        let before1 = indices.partition(ClusterId::Cluster(1)).unwrap().clone();
        let size0 = indices.partition(ClusterId::Cluster(0)).unwrap().len();
        indices.rebuild(&bank2, &touched).unwrap();
        assert_eq!(indices.partition(ClusterId::Cluster(0)).unwrap().len(), size0 + 1);
        assert_eq!(indices.partition(ClusterId::Cluster(0)).unwrap().builds(), 2);
        assert_eq!(indices.partition(ClusterId::Cluster(1)).unwrap(), &before1);
        assert_eq!(before1.builds(), 1);
    }

    #[test]
    fn quality_filter_bounds() {
        let mk = |len: usize, fused: f64| RetrievalCandidate {
            entry: Arc::new(entry(len as u64, ClusterId::Generic, "x y", len, vec![1.0, 0.0])),
            dense_score: fused,
            sparse_score: fused,
            fused_score: fused,
        };
        let cfg = SpikeConfig::default();
        let cands = vec![mk(10, 0.29), mk(10, 0.3), mk(20, 0.9), mk(21, 0.9)];
        let kept = quality_filter(&cands, 10, &cfg);
        assert_eq!(kept.iter().map(|c| c.entry.history().len()).collect::<Vec<_>>(), [10, 20]);
        assert!(quality_filter(&[mk(10, 0.9)], 40, &cfg).is_empty());
        let twice = quality_filter(&kept, 10, &cfg);
        assert_eq!(twice.len(), kept.len());
    }

    #[test]
    fn indices_round_trip_through_disk() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bank = random_bank(&mut rng, 25, 2, 5);
        let indices = build_indices(&bank, Bm25Params::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        indices.save(dir.path()).unwrap();
        assert_eq!(Indices::load(dir.path()).unwrap(), indices);
    }

    proptest! {
        #[test]
        fn fused_scores_are_bounded_and_monotone(
            d in prop::collection::vec(-1.0f64..1.0, 1..12),
            s in prop::collection::vec(0.0f64..10.0, 1..12),
            alpha in 0.0f64..=1.0,
            bump in 0.0f64..1.0,
        ) {
            let dense: Vec<(u64, f64)> = d.iter().enumerate().map(|(i, &x)| (i as u64, x)).collect();
            let sparse: Vec<(u64, f64)> = s.iter().enumerate().map(|(i, &x)| (i as u64, x)).collect();
            let all = fuse_and_rank(&dense, &sparse, alpha, usize::MAX).unwrap();
            for f in &all {
                prop_assert!((0.0..=1.0).contains(&f.fused));
                prop_assert!((f.fused - (alpha * f.dense + (1.0 - alpha) * f.sparse)).abs() <= 1e-12);
            }
            let rank = |v: &[FusedScore]| v.iter().position(|f| f.entry_id == 0).unwrap();
            let mut raised = dense.clone();
            raised[0].1 += bump;
            let after = fuse_and_rank(&raised, &sparse, alpha, usize::MAX).unwrap();
            prop_assert!(rank(&after) <= rank(&all));
        }
    }
}
