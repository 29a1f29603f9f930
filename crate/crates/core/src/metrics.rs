//! Classification metrics over binary labels and real-valued scores.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Area under the ROC curve as the Mann–Whitney statistic: the probability
/// that a random positive outscores a random negative, ties counting half.
pub fn auc<T: Scalar>(labels: &[u8], scores: &[T]) -> Result<T> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch(labels.len(), scores.len()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // sum of (1-based, tie-averaged) ranks of the positives
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok(T::of((rank_sum - p * (p + 1.0) / 2.0) / (p * n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

pub fn confusion<T: Scalar>(labels: &[u8], scores: &[T], threshold: T) -> Result<Confusion> {
    if labels.len() != scores.len() {
        return Err(Error::LengthMismatch(labels.len(), scores.len()));
    }
    let mut c = Confusion { tp: 0, fp: 0, tn: 0, r#fn: 0 };
    for (&l, &s) in labels.iter().zip(scores) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.r#fn += 1,
        }
    }
    Ok(c)
}

/// Accuracy and positive-class F1 at `threshold`. F1 is 0 when precision
/// and recall are both 0; an empty input yields `(0, 0)`.
pub fn acc_f1<T: Scalar>(labels: &[u8], scores: &[T], threshold: T) -> Result<(T, T)> {
    let c = confusion(labels, scores, threshold)?;
    let n = labels.len();
    if n == 0 {
        return Ok((T::zero(), T::zero()));
    }
    let acc = T::of_usize(c.tp + c.tn) / T::of_usize(n);
    let denom = 2 * c.tp + c.fp + c.r#fn;
    let f1 = if c.tp == 0 { T::zero() } else { T::of_usize(2 * c.tp) / T::of_usize(denom) };
    Ok((acc, f1))
}
