//! Exemplar retrieval over the labeled pool.
//!
//! Each candidate `u` is scored against the target `v` by
//! `alpha * cos(q_v, q_u) + (1 - alpha) * jaccard(I_v, I_u)`, where `q` is a
//! hashed term-frequency vector of the node's review texts and `I` its item
//! set. The top-k per class are returned, ties broken by ascending node id.

use crate::graph::{BehaviorTrace, LabelStore};
use crate::intent::encoder::{cosine, HashingEncoder};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeSet;
use thiserror::Error;

pub const DEFAULT_TEXT_DIM: usize = 1024;
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("no labeled nodes to retrieve exemplars from")]
    EmptyPool,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("node {0} out of range")]
    OutOfRange(usize),
}

/// L2-normalized hashed text vector `q_v` (all-zero for an empty trace).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextVector {
    pub values: Vec<f64>,
}

pub fn text_vector(trace: &BehaviorTrace, dim: usize) -> TextVector {
    TextVector {
        values: HashingEncoder::new(dim).embed(&trace.joined_text()).values,
    }
}

/// Jaccard index of two item sets; two empty sets give 0.
pub fn interaction_similarity<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn combined_similarity<T: Ord>(
    alpha: f64,
    q_v: &TextVector,
    q_u: &TextVector,
    items_v: &BTreeSet<T>,
    items_u: &BTreeSet<T>,
) -> f64 {
    alpha * cosine(&q_v.values, &q_u.values)
        + (1.0 - alpha) * interaction_similarity(items_v, items_u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub node: usize,
    pub score: f64,
}

/// Class-specific exemplars `S_v^1` (fraud) and `S_v^0` (benign).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub target: usize,
    pub k: usize,
    pub fraud: Vec<Exemplar>,
    pub benign: Vec<Exemplar>,
}

impl ExemplarSet {
    /// True when a class had fewer than `k` candidates.
    pub fn fraud_short(&self) -> bool {
        self.fraud.len() < self.k
    }

    pub fn benign_short(&self) -> bool {
        self.benign.len() < self.k
    }
}

/// Precomputed text vectors and item sets for every node.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    alpha: f64,
    vectors: Vec<TextVector>,
    items: Vec<BTreeSet<String>>,
}

impl RetrievalIndex {
    pub fn build(
        traces: &[BehaviorTrace],
        alpha: f64,
        text_dim: usize,
    ) -> Result<Self, RetrievalError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(RetrievalError::Alpha(alpha));
        }
        let vectors = traces.iter().map(|t| text_vector(t, text_dim)).collect();
        let items = traces
            .iter()
            .map(|t| t.item_set().into_iter().map(str::to_string).collect())
            .collect();
        Ok(Self {
            alpha,
            vectors,
            items,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn similarity(&self, v: usize, u: usize) -> f64 {
        combined_similarity(
            self.alpha,
            &self.vectors[v],
            &self.vectors[u],
            &self.items[v],
            &self.items[u],
        )
    }

    /// Top-`k` labeled nodes per class, excluding `v` itself.
    pub fn retrieve(
        &self,
        v: usize,
        ls: &LabelStore,
        k: usize,
    ) -> Result<ExemplarSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if v >= self.vectors.len() {
            return Err(RetrievalError::OutOfRange(v));
        }
        if ls.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        let top = |class: u8| {
            let mut scored: Vec<Exemplar> = ls
                .labeled()
                .filter(|&(u, y)| y == class && u != v)
                .map(|(u, _)| Exemplar {
                    node: u,
                    score: self.similarity(v, u),
                })
                .collect();
            scored.sort_by(rank_order);
            scored.truncate(k);
            scored
        };
        Ok(ExemplarSet {
            target: v,
            k,
            fraud: top(1),
            benign: top(0),
        })
    }
}

/// Descending score, then ascending node id.
fn rank_order(a: &Exemplar, b: &Exemplar) -> Ordering {
    b.score.total_cmp(&a.score).then(a.node.cmp(&b.node))
}

pub fn retrieve_exemplars(
    index: &RetrievalIndex,
    v: usize,
    ls: &LabelStore,
    k: usize,
) -> Result<ExemplarSet, RetrievalError> {
    index.retrieve(v, ls, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::TraceRecord;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn trace(items: &[&str], text: &str) -> BehaviorTrace {
        BehaviorTrace::new(
            items
                .iter()
                .enumerate()
                .map(|(i, it)| TraceRecord {
                    item_id: it.to_string(),
                    timestamp: i as i64,
                    rating: 3,
                    text: text.to_string(),
                    helpfulness: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(
            interaction_similarity(&set(&["x", "y"]), &set(&["x", "y"])),
            1.0
        );
        assert!(
            (interaction_similarity(&set(&["x", "y"]), &set(&["y", "z"])) - 1.0 / 3.0).abs()
                < 1e-15
        );
        assert_eq!(interaction_similarity(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn empty_trace_gives_zero_vector() {
        let q = text_vector(&BehaviorTrace::default(), 1024);
        assert!(q.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn combined_arithmetic() {
        // cos = 0.8 between (1, 0) and (0.8, 0.6); jaccard {a,b} vs {b,c,d,e}... = 0.4 via 2/5.
        let qv = TextVector {
            values: vec![1.0, 0.0],
        };
        let qu = TextVector {
            values: vec![0.8, 0.6],
        };
        let iv = set(&["a", "b", "c"]);
        let iu = set(&["b", "c", "d", "e"]);
        assert!((interaction_similarity(&iv, &iu) - 0.4).abs() < 1e-15);
        assert!((combined_similarity(0.5, &qv, &qu, &iv, &iu) - 0.6).abs() < 1e-12);
        assert!((combined_similarity(1.0, &qv, &qu, &iv, &iu) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn target_is_excluded_and_lists_full() {
        let traces = vec![
            trace(&["a"], "good"),
            trace(&["a"], "good"),
            trace(&["a", "b"], "good fine"),
            trace(&["c"], "bad"),
            trace(&["c", "d"], "bad awful"),
        ];
        let ls =
            LabelStore::from_ground_truth(5, [(0, 1), (1, 1), (2, 1), (3, 0), (4, 0)]).unwrap();
        let idx = RetrievalIndex::build(&traces, 0.5, 64).unwrap();
        let ex = idx.retrieve(0, &ls, 2).unwrap();
        assert!(ex.fraud.iter().all(|e| e.node != 0));
        assert_eq!(ex.fraud.len(), 2);
        assert_eq!(ex.benign.len(), 2);
        assert_eq!(ex.fraud[0].node, 1);
        assert!(!ex.fraud_short() && !ex.benign_short());
        // Only one other fraud node for k=3: flagged short.
        let ex = idx.retrieve(0, &ls, 3).unwrap();
        assert!(ex.fraud_short());
    }

    #[test]
    fn ties_break_by_lower_id() {
        let traces = vec![trace(&["a"], "x"); 4];
        let ls = LabelStore::from_ground_truth(4, [(3, 0), (1, 0), (2, 0)]).unwrap();
        let idx = RetrievalIndex::build(&traces, 0.5, 64).unwrap();
        let ex = idx.retrieve(0, &ls, 2).unwrap();
        assert_eq!(
            ex.benign.iter().map(|e| e.node).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert!(ex.fraud.is_empty());
    }

    #[test]
    fn empty_pool_errors() {
        let idx = RetrievalIndex::build(&[BehaviorTrace::default()], 0.5, 8).unwrap();
        assert_eq!(
            idx.retrieve(0, &LabelStore::new(1), 2),
            Err(RetrievalError::EmptyPool)
        );
        assert_eq!(
            RetrievalIndex::build(&[], 1.5, 8).unwrap_err(),
            RetrievalError::Alpha(1.5)
        );
    }
}
