//! Okapi BM25 over pre-tokenized documents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.5, b: 0.75 }
    }
}

/// Corpus statistics. Documents are addressed by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Stats {
    pub params: Bm25Params,
    pub doc_freqs: BTreeMap<String, u32>,
    pub doc_lens: Vec<u32>,
    pub avg_doc_len: f64,
    pub term_freqs: Vec<BTreeMap<String, u32>>,
}

impl Bm25Stats {
    pub fn build<D: AsRef<[String]>>(docs: &[D], params: Bm25Params) -> Self {
        let mut doc_freqs: BTreeMap<String, u32> = BTreeMap::new();
        let mut term_freqs = Vec::with_capacity(docs.len());
        let mut doc_lens = Vec::with_capacity(docs.len());
        for doc in docs {
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in doc.as_ref() {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freqs.entry(t.clone()).or_default() += 1;
            }
            doc_lens.push(doc.as_ref().len() as u32);
            term_freqs.push(tf);
        }
        let total: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        let avg_doc_len = if docs.is_empty() { 0.0 } else { total as f64 / docs.len() as f64 };
        Bm25Stats {
            params,
            doc_freqs,
            doc_lens,
            avg_doc_len,
            term_freqs,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_lens.len()
    }

    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`; always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.doc_freqs.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Score of document `doc` for `query`. Repeated query terms count once
    /// per occurrence.
    pub fn score(&self, query: &[String], doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let len = self.doc_lens[doc] as f64;
        let norm = if self.avg_doc_len > 0.0 { len / self.avg_doc_len } else { 0.0 };
        query
            .iter()
            .map(|q| {
                let tf = self.term_freqs[doc].get(q).copied().unwrap_or(0) as f64;
                if tf == 0.0 {
                    return 0.0;
                }
                self.idf(q) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
            })
            .sum()
    }

    pub fn scores(&self, query: &[String]) -> Vec<f64> {
        (0..self.n_docs()).map(|d| self.score(query, d)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn hand_computed_table() {
        let docs = vec![toks("median mean"), toks("median median range mode"), toks("venn diagram")];
        let s = Bm25Stats::build(&docs, Bm25Params::default());
        // N = 3, df(median) = 2, avgdl = 8/3
        let idf = ((3.0 - 2.0 + 0.5) / (2.0 + 0.5) + 1.0f64).ln();
        let avg = 8.0 / 3.0;
        let expect = |tf: f64, len: f64| idf * tf * 2.5 / (tf + 1.5 * (0.25 + 0.75 * len / avg));
        let q = toks("median");
        assert!((s.score(&q, 0) - expect(1.0, 2.0)).abs() < 1e-9);
        assert!((s.score(&q, 1) - expect(2.0, 4.0)).abs() < 1e-9);
        assert_eq!(s.score(&q, 2), 0.0);
    }

    #[test]
    fn no_overlap_scores_zero() {
        let docs = vec![toks("a1 b1"), toks("c1")];
        let s = Bm25Stats::build(&docs, Bm25Params::default());
        assert_eq!(s.scores(&toks("zz")), vec![0.0, 0.0]);
    }

    #[test]
    fn longer_doc_same_tf_scores_lower() {
        let short = vec![toks("median filler"), toks("other words here")];
        let long = vec![toks("median filler filler filler"), toks("other words here")];
        let q = toks("median");
        let a = Bm25Stats::build(&short, Bm25Params::default()).score(&q, 0);
        let b = Bm25Stats::build(&long, Bm25Params::default()).score(&q, 0);
        assert!(b < a);
    }
}
