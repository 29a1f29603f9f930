//! Density-based clustering (DBSCAN) over an arbitrary distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{self, Scalar};

/// Label for points that belong to no cluster.
pub const NOISE: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams { eps: 0.4, min_pts: 5 }
    }
}

/// DBSCAN with cosine distance. See [`dbscan_with`].
pub fn dbscan<T: Scalar, V: AsRef<[T]> + Sync>(points: &[V], params: &ClusterParams) -> Result<Vec<i32>> {
    dbscan_with(points, params, |a, b| num::cosine_distance(a, b))
}

/// Labels each point with a cluster index `0..K` or [`NOISE`].
///
/// Core points have at least `min_pts` points (themselves included) within
/// `eps`. Clusters are the connected components of core points, numbered in
/// order of their lowest-index member. A border point joins the cluster of
/// its nearest core neighbor (lowest index on ties). Clusters left with fewer
/// than `min_pts` members are dissolved into noise and the rest renumbered.
///
/// Returns [`Error::AllNoise`] when no cluster survives.
pub fn dbscan_with<T, V, F>(points: &[V], params: &ClusterParams, dist: F) -> Result<Vec<i32>>
where
    T: Scalar,
    V: AsRef<[T]> + Sync,
    F: Fn(&[T], &[T]) -> T + Sync,
{
    let n = points.len();
    if n < params.min_pts.max(1) {
        return Err(Error::TooFewPoints {
            needed: params.min_pts.max(1),
            got: n,
        });
    }
    let eps = T::of(params.eps);

    let neighbors: Vec<Vec<(usize, T)>> = {
        use rayon::prelude::*;
        (0..n)
            .into_par_iter()
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let d = dist(points[i].as_ref(), points[j].as_ref());
                        (d <= eps).then_some((j, d))
                    })
                    .collect()
            })
            .collect()
    };
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= params.min_pts).collect();

    let mut labels = vec![NOISE; n];
    let mut next = 0i32;
    for start in 0..n {
        if !is_core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = next;
        let mut stack = vec![start];
        while let Some(p) = stack.pop() {
            for &(q, _) in &neighbors[p] {
                if is_core[q] && labels[q] == NOISE {
                    labels[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }

    for i in 0..n {
        if is_core[i] {
            continue;
        }
        let nearest = neighbors[i]
            .iter()
            .filter(|(j, _)| is_core[*j])
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
        if let Some(&(j, _)) = nearest {
            labels[i] = labels[j];
        }
    }

    // dissolve undersized clusters, renumber the survivors in order
    let mut sizes = vec![0usize; next as usize];
    for &l in &labels {
        if l >= 0 {
            sizes[l as usize] += 1;
        }
    }
    let mut remap = vec![NOISE; next as usize];
    let mut k = 0;
    for (old, &size) in sizes.iter().enumerate() {
        if size >= params.min_pts {
            remap[old] = k;
            k += 1;
        }
    }
    for l in labels.iter_mut() {
        if *l >= 0 {
            *l = remap[*l as usize];
        }
    }
    if k == 0 {
        return Err(Error::AllNoise);
    }
    Ok(labels)
}

pub fn cluster_count(labels: &[i32]) -> usize {
    labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
}
