mod common;

use l2ir::graph::{BehaviorTrace, LabelStore, TraceRecord};
use l2ir::intent::HashingEncoder;
use l2ir::retrieval::{RetrievalError, RetrievalIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::HashSet;

const WORDS: &[&str] = &[
    "great", "cheap", "broke", "fast", "love", "refund", "gift", "ok",
];

fn random_traces(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<BehaviorTrace> {
    (0..n)
        .map(|_| {
            let records = (0..rng.gen_range(0..4))
                .map(|i| TraceRecord {
                    item_id: format!("p{}", rng.gen_range(0..6)),
                    timestamp: i,
                    rating: rng.gen_range(1..=5),
                    text: (0..3)
                        .map(|_| *WORDS.choose(rng).unwrap())
                        .collect::<Vec<_>>()
                        .join(" "),
                    helpfulness: 0.0,
                })
                .collect();
            BehaviorTrace::new(records).unwrap()
        })
        .collect()
}

/// Cosine of raw hashed counts plus Jaccard of item sets, from scratch.
fn oracle_similarity(a: &BehaviorTrace, b: &BehaviorTrace, alpha: f64, dim: usize) -> f64 {
    let enc = HashingEncoder::new(dim);
    let (x, y) = (
        enc.term_counts(&a.joined_text()),
        enc.term_counts(&b.joined_text()),
    );
    let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
    let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
    let ny = y.iter().map(|p| p * p).sum::<f64>().sqrt();
    let cos = if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        dot / (nx * ny)
    };
    let ia: HashSet<_> = a.records().iter().map(|r| &r.item_id).collect();
    let ib: HashSet<_> = b.records().iter().map(|r| &r.item_id).collect();
    let union = ia.union(&ib).count();
    let jac = if union == 0 {
        0.0
    } else {
        ia.intersection(&ib).count() as f64 / union as f64
    };
    alpha * cos + (1.0 - alpha) * jac
}

#[test]
fn top_k_matches_exhaustive_ranking() {
    let mut rng = common::rng(3);
    for _ in 0..30 {
        let n = rng.gen_range(5..60);
        let traces = random_traces(n, &mut rng);
        let mut labels = Vec::new();
        for v in 0..n {
            if rng.gen_bool(0.6) {
                labels.push((v, u8::from(rng.gen_bool(0.3))));
            }
        }
        if labels.is_empty() {
            continue;
        }
        let ls = LabelStore::from_ground_truth(n, labels.clone()).unwrap();
        let alpha = [0.0, 0.5, 1.0][rng.gen_range(0..3)];
        let k = rng.gen_range(1..4);
        let index = RetrievalIndex::build(&traces, alpha, 64).unwrap();
        for v in 0..n {
            let got = index.retrieve(v, &ls, k).unwrap();
            for (class, got) in [(1u8, &got.fraud), (0, &got.benign)] {
                let mut ranked: Vec<(usize, f64)> = labels
                    .iter()
                    .filter(|&&(u, y)| y == class && u != v)
                    .map(|&(u, _)| (u, oracle_similarity(&traces[v], &traces[u], alpha, 64)))
                    .collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let want = &ranked[..k.min(ranked.len())];
                let ids: Vec<usize> = got.iter().map(|e| e.node).collect();
                let scores: Vec<f64> = got.iter().map(|e| e.score).collect();
                // Scores agree to rounding; equal-score groups keep id order.
                for (g, w) in scores.iter().zip(want) {
                    assert!((g - w.1).abs() < 1e-12);
                }
                assert_eq!(ids.len(), want.len());
                // Ids must agree wherever the oracle ranking has no near-tie.
                for (i, w) in want.iter().enumerate() {
                    let clear = ranked
                        .iter()
                        .enumerate()
                        .all(|(j, o)| j == i || (o.1 - w.1).abs() > 1e-9);
                    if clear {
                        assert_eq!(ids[i], w.0);
                    }
                }
                for w in got.windows(2) {
                    assert!(
                        w[0].score > w[1].score
                            || (w[0].score == w[1].score && w[0].node < w[1].node)
                    );
                }
            }
        }
    }
}

#[test]
fn target_is_never_its_own_exemplar() {
    let mut rng = common::rng(8);
    let traces = random_traces(10, &mut rng);
    let ls = LabelStore::from_ground_truth(10, (0..10).map(|v| (v, u8::from(v < 3)))).unwrap();
    let index = RetrievalIndex::build(&traces, 0.5, 64).unwrap();
    let ex = index.retrieve(0, &ls, 5).unwrap();
    assert!(ex.fraud.iter().all(|e| e.node != 0));
    assert_eq!(ex.fraud.len(), 2);
    assert!(ex.fraud_short());
    assert!(!ex.benign_short());
}

#[test]
fn bad_inputs() {
    let traces = random_traces(3, &mut common::rng(1));
    assert_eq!(
        RetrievalIndex::build(&traces, 1.5, 64).unwrap_err(),
        RetrievalError::Alpha(1.5)
    );
    let index = RetrievalIndex::build(&traces, 0.5, 64).unwrap();
    let ls = LabelStore::from_ground_truth(3, [(1, 0)]).unwrap();
    assert_eq!(
        index.retrieve(0, &ls, 0).unwrap_err(),
        RetrievalError::ZeroK
    );
    assert_eq!(
        index.retrieve(7, &ls, 1).unwrap_err(),
        RetrievalError::OutOfRange(7)
    );
    assert_eq!(
        index.retrieve(0, &LabelStore::new(3), 1).unwrap_err(),
        RetrievalError::EmptyPool
    );
}
