//! Cognitive schema discovery: reduce sequence embeddings, cluster them by
//! density, label clusters with c-TF-IDF keywords, and route new students to
//! the nearest centroid (or the generic pool).

pub mod ctfidf;
pub mod dbscan;
pub mod reduce;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use ctfidf::{ctfidf, CtfidfTable};
pub use dbscan::{dbscan, ClusterParams, NOISE};
pub use reduce::{reduce, ReducerKind, ReducerParams};

use crate::embed::{embed_sequence, embed_sequences, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::model::{ClusterId, EmbeddingVector, Split, StudentSequence};
use crate::num;
use crate::text::sequence_tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub reducer: ReducerKind,
    pub target_dim: usize,
    #[serde(flatten)]
    pub cluster: ClusterParams,
    /// Sequences shorter than this are routed to the generic pool.
    pub min_len_for_routing: usize,
    pub top_keywords: usize,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            reducer: ReducerKind::GaussianProjection,
            target_dim: 32,
            cluster: ClusterParams::default(),
            min_len_for_routing: 5,
            top_keywords: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub word: String,
    pub weight: f64,
}

/// Fitted schema: projection parameters, unit centroids in the reduced space
/// and keyword labels per cluster. `K = centroids.len()` may be 0, in which
/// case every student routes to the generic pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaModel {
    pub seed: u64,
    pub reducer_params: ReducerParams,
    pub centroids: Vec<Vec<f64>>,
    /// Unit mean of all training points; anchors the generic pool.
    pub generic_centroid: Vec<f64>,
    pub keywords: Vec<Vec<Keyword>>,
    pub cluster_params: ClusterParams,
    pub provider_name: String,
    pub dimension: usize,
    pub min_len_for_routing: usize,
}

/// Where one student landed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub student_id: String,
    pub cluster_id: ClusterId,
    pub distance_to_centroid: f64,
}

/// A training member with its reduced coordinates, as produced by the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    #[serde(flatten)]
    pub assignment: ClusterAssignment,
    pub reduced: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SchemaFit {
    pub model: SchemaModel,
    /// Training members ordered by student id.
    pub members: Vec<MemberRecord>,
    pub ctfidf: CtfidfTable,
}

impl SchemaModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn reduce(&self, h: &EmbeddingVector) -> Result<Vec<f64>> {
        if h.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: h.dimension(),
            });
        }
        self.reducer_params.project(h.as_slice())
    }

    pub fn centroid(&self, cluster: ClusterId) -> &[f64] {
        match cluster {
            ClusterId::Cluster(k) => &self.centroids[k as usize],
            ClusterId::Generic => &self.generic_centroid,
        }
    }

    /// Nearest centroid by cosine distance, lowest index on ties. `None` when
    /// `K = 0`.
    pub fn nearest(&self, reduced: &[f64]) -> Option<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        for (k, c) in self.centroids.iter().enumerate() {
            let d = num::cosine_distance(reduced, c);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k as u32, d));
            }
        }
        best
    }

    /// Routes an already-embedded sequence of `len` interactions.
    pub fn assign_embedded(&self, student_id: &str, len: usize, h: &EmbeddingVector) -> Result<ClusterAssignment> {
        let reduced = self.reduce(h)?;
        let (cluster_id, distance) = match self.nearest(&reduced) {
            Some((k, d)) if len >= self.min_len_for_routing => (ClusterId::Cluster(k), d),
            _ => (
                ClusterId::Generic,
                num::cosine_distance(&reduced, &self.generic_centroid),
            ),
        };
        Ok(ClusterAssignment {
            student_id: student_id.to_string(),
            cluster_id,
            distance_to_centroid: distance,
        })
    }

    pub fn keyword_labels(&self, cluster: u32) -> Vec<&str> {
        self.keywords
            .get(cluster as usize)
            .map(|ks| ks.iter().map(|k| k.word.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::jsonl::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::jsonl::read_json(path)
    }
}

/// Routes `seq` to a schema: embed, reduce, nearest centroid. Short
/// (cold-start) sequences and `K = 0` models go to the generic pool.
pub fn assign(seq: &StudentSequence, model: &SchemaModel, provider: &dyn EmbeddingProvider) -> Result<ClusterAssignment> {
    let h = embed_sequence(seq, provider)?;
    model.assign_embedded(seq.student_id(), seq.len(), &h)
}

fn unit_mean(rows: &[&Vec<f64>]) -> Vec<f64> {
    let mean = num::mean_vector(rows).unwrap_or_default();
    match EmbeddingVector::normalized(mean) {
        Ok(v) => v.into_inner(),
        // antipodal members cancel out; fall back to the first member
        Err(_) => rows.first().map(|r| (*r).clone()).unwrap_or_default(),
    }
}

/// Fits the schema on training sequences.
///
/// Input order does not matter: sequences are processed in student-id order,
/// which also fixes cluster numbering. Too few points or an all-noise
/// clustering yield a `K = 0` model with every student in the generic pool.
pub fn fit_schema(
    train: &[StudentSequence],
    provider: &dyn EmbeddingProvider,
    cfg: &SchemaConfig,
    seed: u64,
) -> Result<SchemaFit> {
    if train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(s) = train.iter().find(|s| s.split() != Split::Train) {
        return Err(Error::invalid(
            "schema input",
            format!("student {} is not from the training split", s.student_id()),
        ));
    }
    let mut order: Vec<&StudentSequence> = train.iter().collect();
    order.sort_by(|a, b| a.student_id().cmp(b.student_id()));
    let owned: Vec<StudentSequence> = order.iter().map(|s| (*s).clone()).collect();

    let embeddings = embed_sequences(&owned, provider)?;
    let dim = provider.dimension();
    let target_dim = match cfg.reducer {
        ReducerKind::Identity => dim,
        ReducerKind::GaussianProjection => cfg.target_dim,
    };
    let params = ReducerParams::new(cfg.reducer, seed, dim, target_dim)?;
    let reduced: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|h| params.project(h.as_slice()))
        .collect::<Result<_>>()?;

    let labels = if reduced.len() < cfg.cluster.min_pts.max(2) {
        vec![NOISE; reduced.len()]
    } else {
        match dbscan(&reduced, &cfg.cluster) {
            Ok(l) => l,
            Err(Error::AllNoise) => vec![NOISE; reduced.len()],
            Err(e) => return Err(e),
        }
    };
    let k = dbscan::cluster_count(&labels);

    let centroids: Vec<Vec<f64>> = (0..k as i32)
        .map(|c| {
            let rows: Vec<&Vec<f64>> = reduced.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r).collect();
            unit_mean(&rows)
        })
        .collect();
    let generic_centroid = unit_mean(&reduced.iter().collect::<Vec<_>>());

    let mut docs: BTreeMap<u32, Vec<Vec<String>>> = (0..k as u32).map(|c| (c, Vec::new())).collect();
    for (seq, &l) in owned.iter().zip(&labels) {
        if l >= 0 {
            docs.get_mut(&(l as u32)).expect("cluster key").push(sequence_tokens(seq));
        }
    }
    let table: CtfidfTable = ctfidf(&docs);
    let keywords = (0..k as u32)
        .map(|c| {
            table
                .top_keywords(c, cfg.top_keywords)
                .into_iter()
                .map(|(word, weight)| Keyword { word, weight })
                .collect()
        })
        .collect();

    let members = owned
        .iter()
        .zip(&labels)
        .zip(reduced)
        .map(|((seq, &l), r)| {
            let (cluster_id, centroid) = if l >= 0 {
                (ClusterId::Cluster(l as u32), &centroids[l as usize])
            } else {
                (ClusterId::Generic, &generic_centroid)
            };
            MemberRecord {
                assignment: ClusterAssignment {
                    student_id: seq.student_id().to_string(),
                    cluster_id,
                    distance_to_centroid: num::cosine_distance(&r, centroid),
                },
                reduced: r,
            }
        })
        .collect();

    Ok(SchemaFit {
        model: SchemaModel {
            seed,
            reducer_params: params,
            centroids,
            generic_centroid,
            keywords,
            cluster_params: cfg.cluster,
            provider_name: provider.name().to_string(),
            dimension: dim,
            min_len_for_routing: cfg.min_len_for_routing,
        },
        members,
        ctfidf: table,
    })
}

/// Writes `student_id,cluster_id,x,y` rows: a seeded 2-D projection of the
/// reduced coordinates for external plotting.
pub fn write_plot_csv<W: Write>(out: W, members: &[MemberRecord], seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["student_id", "cluster_id", "x", "y"])?;
    if let Some(first) = members.first() {
        let proj = ReducerParams::gaussian(seed, first.reduced.len(), 2);
        for m in members {
            let xy = proj.project_raw(&m.reduced)?;
            w.write_record([
                m.assignment.student_id.clone(),
                m.assignment.cluster_id.to_string(),
                format!("{:.6}", xy[0]),
                format!("{:.6}", xy[1]),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("plot csv", e))
}
