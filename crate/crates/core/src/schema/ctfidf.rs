//! Class-based TF-IDF: scores words per cluster as
//! `tf(w, k) * ln(1 + A / f_w)`, where `tf` counts `w` in cluster `k`, `A` is
//! the mean token count per cluster and `f_w` counts `w` over all clusters.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::num::Scalar;
use crate::text::denoise;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtfidfTable<T: Scalar = f64> {
    pub weights: BTreeMap<u32, BTreeMap<String, T>>,
    pub avg_words_per_cluster: T,
    pub global_word_freq: BTreeMap<String, u64>,
}

fn survives_denoise(token: &str) -> bool {
    matches!(denoise(token).as_slice(), [t] if t == token)
}

/// Builds the table from each cluster's documents (token lists). Tokens that
/// the denoising filter would reject are ignored. Clusters without tokens
/// count toward `A` but get no weights.
pub fn ctfidf<T: Scalar>(cluster_docs: &BTreeMap<u32, Vec<Vec<String>>>) -> CtfidfTable<T> {
    let mut tf: BTreeMap<u32, BTreeMap<&str, u64>> = BTreeMap::new();
    let mut global: BTreeMap<String, u64> = BTreeMap::new();
    let mut total_tokens = 0u64;
    for (&k, docs) in cluster_docs {
        let counts = tf.entry(k).or_default();
        for token in docs.iter().flatten().filter(|t| survives_denoise(t)) {
            *counts.entry(token.as_str()).or_default() += 1;
            *global.entry(token.clone()).or_default() += 1;
            total_tokens += 1;
        }
    }
    let n_clusters = cluster_docs.len().max(1);
    let avg = T::of_usize(total_tokens as usize) / T::of_usize(n_clusters);

    let weights = tf
        .into_iter()
        .map(|(k, counts)| {
            let row = counts
                .into_iter()
                .map(|(w, c)| {
                    let f_w = T::of_usize(global[w] as usize);
                    (w.to_string(), T::of_usize(c as usize) * (T::one() + avg / f_w).ln())
                })
                .collect();
            (k, row)
        })
        .collect();

    CtfidfTable {
        weights,
        avg_words_per_cluster: avg,
        global_word_freq: global,
    }
}

impl<T: Scalar> CtfidfTable<T> {
    pub fn weight(&self, cluster: u32, word: &str) -> T {
        self.weights
            .get(&cluster)
            .and_then(|row| row.get(word))
            .copied()
            .unwrap_or_else(T::zero)
    }

    /// Highest-weighted `n` words of a cluster; ties broken alphabetically.
    pub fn top_keywords(&self, cluster: u32, n: usize) -> Vec<(String, T)> {
        let Some(row) = self.weights.get(&cluster) else {
            return Vec::new();
        };
        let mut words: Vec<(String, T)> = row.iter().map(|(w, &s)| (w.clone(), s)).collect();
        words.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then_with(|| a.0.cmp(&b.0)));
        words.truncate(n);
        words
    }
}
