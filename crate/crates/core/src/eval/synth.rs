//! Synthetic multi-relation review graphs with controlled camouflage.

use crate::graph::connection_similarity;
use crate::graph::GraphBundle;
use crate::graph::{
    BehaviorTrace, HeteroGraph, LabelStore, NodeFeatures, RelationSel, TraceRecord,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;
use thiserror::Error;

/// Tolerance on the realized fraud-neighbor fraction.
pub const CAMOUFLAGE_TOLERANCE: f64 = 0.05;

const EPOCH_2013: i64 = 1_356_998_400;
const DAY: i64 = 86_400;
const SPAN_DAYS: i64 = 730;
const CATALOG: usize = 800;
const PROMOTED: usize = 12;

const NEUTRAL_WORDS: &[&str] = &[
    "battery",
    "box",
    "build",
    "cable",
    "case",
    "charger",
    "color",
    "design",
    "device",
    "fit",
    "handle",
    "kitchen",
    "lid",
    "material",
    "model",
    "package",
    "price",
    "product",
    "quality",
    "screen",
    "set",
    "size",
    "sound",
    "strap",
    "surface",
    "switch",
    "texture",
    "tool",
    "unit",
    "weight",
    "works",
    "used",
    "week",
    "month",
    "daily",
    "after",
    "before",
    "still",
    "again",
    "expected",
    "arrived",
    "bought",
    "ordered",
    "installed",
    "tried",
    "cleaned",
    "replaced",
    "compared",
    "older",
    "second",
];
const GOOD_WORDS: &[&str] = &[
    "good",
    "great",
    "nice",
    "happy",
    "solid",
    "sturdy",
    "comfortable",
    "reliable",
];
const BAD_WORDS: &[&str] = &[
    "bad",
    "poor",
    "broken",
    "disappointed",
    "problem",
    "return",
    "flimsy",
    "cheap",
];
const MOTIF_WORDS: &[&str] = &[
    "amazing",
    "best",
    "must",
    "buy",
    "perfect",
    "deal",
    "fantastic",
    "love",
    "seller",
    "fast",
    "shipping",
    "everyone",
];
const BENIGN_RATING_WEIGHTS: [f64; 5] = [0.07, 0.08, 0.15, 0.30, 0.40];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub fraud_ratio: f64,
    /// Target fraction of benign neighbors around fraud nodes.
    pub camouflage: f64,
    pub relations: usize,
    /// Probability that a fraud review carries the coordinated pattern
    /// (burst timing, five stars, promoted item, shared wording).
    pub trace_signal: f64,
    pub seed: u64,
    pub feature_dim: usize,
    /// Distance between the class feature means.
    pub feature_sep: f64,
    pub avg_degree: f64,
    pub train_ratio: f64,
    pub test_ratio: f64,
    pub reviews: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_nodes: 2000,
            fraud_ratio: 0.07,
            camouflage: 0.90,
            relations: 3,
            trace_signal: 0.8,
            seed: 7,
            feature_dim: 25,
            feature_sep: 1.5,
            avg_degree: 12.0,
            train_ratio: 0.3,
            test_ratio: 0.3,
            reviews: (4, 8),
        }
    }
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("infeasible wiring: {0}")]
    Infeasible(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("write: {0}")]
    Write(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Unlabeled,
    Test,
}

/// Full labels and split assignment, kept out of the node file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub labels: Vec<u8>,
    pub split: Vec<Split>,
}

impl Truth {
    pub fn nodes_in(&self, s: Split) -> Vec<usize> {
        (0..self.split.len())
            .filter(|&v| self.split[v] == s)
            .collect()
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Graph with labels for the train split only.
    pub bundle: GraphBundle,
    pub truth: Truth,
    /// Realized fraud-neighbor fraction under the projected graph.
    pub connection_similarity: f64,
}

impl SynthOutput {
    /// Writes `nodes.jsonl`, `edges.jsonl` and `truth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        self.bundle
            .write_jsonl(&dir.join("nodes.jsonl"), &dir.join("edges.jsonl"))
            .map_err(|e| SynthError::Write(e.to_string()))?;
        fs::write(
            dir.join("truth.json"),
            serde_json::to_string(&self.truth).expect("truth serializes"),
        )?;
        Ok(())
    }
}

fn validate(cfg: &SynthConfig) -> Result<(), SynthError> {
    let bad = |m: &str| Err(SynthError::Config(m.into()));
    if !(cfg.fraud_ratio > 0.0 && cfg.fraud_ratio < 1.0) {
        return bad("fraud_ratio must lie in (0, 1)");
    }
    if !(0.0..=1.0).contains(&cfg.camouflage) {
        return bad("camouflage must lie in [0, 1]");
    }
    if !(0.0..=1.0).contains(&cfg.trace_signal) {
        return bad("trace_signal must lie in [0, 1]");
    }
    if cfg.relations == 0 || cfg.feature_dim == 0 || cfg.avg_degree <= 0.0 {
        return bad("relations, feature_dim and avg_degree must be positive");
    }
    if cfg.reviews.0 > cfg.reviews.1 {
        return bad("review range is reversed");
    }
    if cfg.train_ratio <= 0.0 || cfg.test_ratio < 0.0 || cfg.train_ratio + cfg.test_ratio > 1.0 {
        return bad(
            "split ratios must be non-negative with a positive train share and sum to at most 1",
        );
    }
    Ok(())
}

/// `floor(x)` plus one with probability `fract(x)`.
fn stochastic_round<R: Rng>(x: f64, rng: &mut R) -> usize {
    let base = x.floor();
    base as usize + usize::from(rng.gen::<f64>() < x - base)
}

fn wire<R: Rng>(
    cfg: &SynthConfig,
    fraud: &[usize],
    benign: &[usize],
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let d = cfg.avg_degree / cfg.relations as f64;
    let mut edges = BTreeSet::new();
    let mut add = |u: usize, v: usize| {
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    };
    // Each drawn edge adds a neighbor to both ends, hence the halving.
    for &v in benign {
        for _ in 0..stochastic_round(d / 2.0, rng) {
            add(v, benign[rng.gen_range(0..benign.len())]);
        }
    }
    for &v in fraud {
        for _ in 0..stochastic_round(d * cfg.camouflage, rng) {
            add(v, benign[rng.gen_range(0..benign.len())]);
        }
        if fraud.len() > 1 {
            for _ in 0..stochastic_round(d * (1.0 - cfg.camouflage) / 2.0, rng) {
                add(v, fraud[rng.gen_range(0..fraud.len())]);
            }
        }
    }
    edges.into_iter().collect()
}

fn words<R: Rng>(pool: &[&str], n: usize, rng: &mut R) -> Vec<String> {
    (0..n)
        .map(|_| pool[rng.gen_range(0..pool.len())].to_string())
        .collect()
}

fn ordinary_review<R: Rng>(rng: &mut R) -> TraceRecord {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut rating = 5;
    for (i, w) in BENIGN_RATING_WEIGHTS.iter().enumerate() {
        acc += w;
        if u < acc {
            rating = i as u8 + 1;
            break;
        }
    }
    let mut text = words(NEUTRAL_WORDS, rng.gen_range(5..=10), rng);
    let tone = match rating {
        1 | 2 => BAD_WORDS,
        3 => {
            if rng.gen() {
                GOOD_WORDS
            } else {
                BAD_WORDS
            }
        }
        _ => GOOD_WORDS,
    };
    text.extend(words(tone, rng.gen_range(1..=2), rng));
    text.shuffle(rng);
    TraceRecord {
        item_id: format!("i{:03}", rng.gen_range(0..CATALOG)),
        timestamp: EPOCH_2013 + rng.gen_range(0..SPAN_DAYS * DAY),
        rating,
        text: text.join(" "),
        helpfulness: (rng.gen::<f64>() * 100.0).round() / 100.0,
    }
}

fn coordinated_review<R: Rng>(burst_start: i64, promoted: &[usize], rng: &mut R) -> TraceRecord {
    let mut text = words(MOTIF_WORDS, rng.gen_range(3..=5), rng);
    text.extend(words(NEUTRAL_WORDS, rng.gen_range(2..=4), rng));
    text.shuffle(rng);
    TraceRecord {
        item_id: format!("i{:03}", promoted[rng.gen_range(0..promoted.len())]),
        timestamp: burst_start + rng.gen_range(0..2 * DAY),
        rating: 5,
        text: text.join(" "),
        helpfulness: (rng.gen::<f64>() * 20.0).round() / 100.0,
    }
}

/// Generates a camouflaged review graph. Deterministic per `cfg.seed`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    validate(cfg)?;
    let n = cfg.n_nodes;
    let n_fraud = (n as f64 * cfg.fraud_ratio).round() as usize;
    if n_fraud == 0 || n_fraud >= n {
        return Err(SynthError::Infeasible(format!(
            "{n} nodes at ratio {} leave a class empty",
            cfg.fraud_ratio
        )));
    }
    if cfg.camouflage < 1.0 && n_fraud < 2 {
        return Err(SynthError::Infeasible(
            "fraud-fraud edges need at least two fraud nodes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut labels = vec![0u8; n];
    for &v in &order[..n_fraud] {
        labels[v] = 1;
    }
    let fraud: Vec<usize> = (0..n).filter(|&v| labels[v] == 1).collect();
    let benign: Vec<usize> = (0..n).filter(|&v| labels[v] == 0).collect();

    // Stratified three-way split.
    let mut split = vec![Split::Unlabeled; n];
    for class in [&fraud, &benign] {
        let mut members = class.clone();
        members.shuffle(&mut rng);
        let n_train = ((members.len() as f64 * cfg.train_ratio).round() as usize).max(1);
        let n_test = (members.len() as f64 * cfg.test_ratio).round() as usize;
        for (i, &v) in members.iter().enumerate() {
            split[v] = if i < n_train {
                Split::Train
            } else if i < n_train + n_test {
                Split::Test
            } else {
                Split::Unlabeled
            };
        }
    }

    let shift = cfg.feature_sep / (cfg.feature_dim as f64).sqrt();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let mean = if labels[v] == 1 { shift } else { 0.0 };
            (0..cfg.feature_dim)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    mean + e
                })
                .collect::<Vec<f64>>()
        })
        .collect();

    let relations: Vec<(String, Vec<(usize, usize)>)> = (0..cfg.relations)
        .map(|r| (format!("r{r}"), wire(cfg, &fraud, &benign, &mut rng)))
        .collect();

    let mut catalog: Vec<usize> = (0..CATALOG).collect();
    catalog.shuffle(&mut rng);
    let promoted = &catalog[..PROMOTED];
    let mut traces = Vec::with_capacity(n);
    for &y in &labels {
        let count = rng.gen_range(cfg.reviews.0..=cfg.reviews.1);
        let burst_start = EPOCH_2013 + rng.gen_range(0..(SPAN_DAYS - 3) * DAY);
        let records = (0..count)
            .map(|_| {
                if y == 1 && rng.gen::<f64>() < cfg.trace_signal {
                    coordinated_review(burst_start, promoted, &mut rng)
                } else {
                    ordinary_review(&mut rng)
                }
            })
            .collect();
        traces.push(BehaviorTrace::new(records).expect("generated ratings are valid"));
    }

    let graph =
        HeteroGraph::new(n, relations).map_err(|e| SynthError::Infeasible(e.to_string()))?;
    let full = LabelStore::from_ground_truth(n, labels.iter().enumerate().map(|(v, &y)| (v, y)))
        .expect("binary labels");
    let realized = connection_similarity(&graph, &full, &RelationSel::All)
        .map_err(|e| SynthError::Infeasible(e.to_string()))?;
    let target = 1.0 - cfg.camouflage;
    if (realized - target).abs() > CAMOUFLAGE_TOLERANCE {
        return Err(SynthError::Infeasible(format!(
            "fraud-neighbor fraction {realized:.3} misses target {target:.3} by more than {CAMOUFLAGE_TOLERANCE}"
        )));
    }

    let train_labels = (0..n)
        .filter(|&v| split[v] == Split::Train)
        .map(|v| (v, labels[v]));
    let bundle = GraphBundle {
        graph,
        features: NodeFeatures::from_rows(rows).expect("consistent rows"),
        traces,
        labels: LabelStore::from_ground_truth(n, train_labels).expect("binary labels"),
        ids: (0..n).map(|v| format!("u{v:05}")).collect(),
    };
    Ok(SynthOutput {
        bundle,
        truth: Truth { labels, split },
        connection_similarity: realized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_nodes: 400,
            fraud_ratio: 0.1,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.bundle, b.bundle);
        assert_eq!(a.truth, b.truth);
        let c = generate_synthetic(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.bundle.features, c.bundle.features);
    }

    #[test]
    fn only_train_nodes_are_labeled() {
        let out = generate_synthetic(&small()).unwrap();
        for v in 0..400 {
            let labeled = out.bundle.labels.is_labeled(v);
            assert_eq!(labeled, out.truth.split[v] == Split::Train);
            if labeled {
                assert_eq!(out.bundle.labels.label(v), Some(out.truth.labels[v]));
            }
        }
        assert!(out.bundle.labels.count_class(1) > 0);
    }

    #[test]
    fn zero_signal_fraud_reviews_look_ordinary() {
        let out = generate_synthetic(&SynthConfig {
            trace_signal: 0.0,
            ..small()
        })
        .unwrap();
        for (v, t) in out.bundle.traces.iter().enumerate() {
            if out.truth.labels[v] == 1 {
                let text = t.joined_text();
                assert!(!text.split(' ').any(|w| MOTIF_WORDS.contains(&w)), "{text}");
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(
            generate_synthetic(&SynthConfig {
                fraud_ratio: 0.0,
                ..small()
            }),
            Err(SynthError::Config(_))
        ));
        assert!(matches!(
            generate_synthetic(&SynthConfig {
                camouflage: 1.5,
                ..small()
            }),
            Err(SynthError::Config(_))
        ));
        assert!(matches!(
            generate_synthetic(&SynthConfig {
                n_nodes: 10,
                fraud_ratio: 0.05,
                ..small()
            }),
            Err(SynthError::Infeasible(_))
        ));
    }
}
