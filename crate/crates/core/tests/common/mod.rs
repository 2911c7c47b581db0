//! Brute-force oracles and fixtures shared by the integration targets.
#![allow(dead_code)]

use l2ir::eval::{generate_synthetic, SynthConfig, SynthOutput};
use l2ir::gnn::{backward, bce_loss, forward_propagated, GnnModel, NormAdj, Propagated};
use l2ir::graph::{HeteroGraph, LabelStore, NodeFeatures};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Undirected random graph with roughly `n * deg / 2` distinct edges.
pub fn random_edges(n: usize, deg: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = (0..n * deg / 2)
        .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
        .filter(|(u, v)| u != v)
        .map(|(u, v)| (u.min(v), u.max(v)))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

pub fn random_propagated(n: usize, d: usize, seed: u64) -> Propagated {
    let mut r = rng(seed);
    let edges = random_edges(n, 4, &mut r);
    let adj = NormAdj::from_edges(n, &edges).unwrap();
    let x = Array2::from_shape_fn((n, d), |_| r.gen_range(-1.0..1.0));
    Propagated::new(adj, x.view()).unwrap()
}

/// Smallest distance of any hidden pre-activation from the ReLU kink.
pub fn kink_margin(m: &GnnModel, g: &Propagated) -> f64 {
    let pre = g.ax.dot(&m.w1) + &m.b1;
    pre.iter().fold(f64::INFINITY, |acc, x| acc.min(x.abs()))
}

/// A model with random biases on a random graph whose hidden
/// pre-activations all sit at least `margin` from zero, so a central
/// difference of step below `margin` never straddles the kink. Seeds are
/// tried in order from `seed`; the one used is returned.
pub fn kink_free_instance(
    n: usize,
    d: usize,
    hidden: usize,
    seed: u64,
    margin: f64,
) -> (Propagated, GnnModel, u64) {
    (seed..)
        .map(|s| {
            let g = random_propagated(n, d, s);
            let mut m = GnnModel::init(d, hidden, s);
            let mut r = rng(s ^ 0xb1a5);
            m.b1.iter_mut().for_each(|b| *b = r.gen_range(-0.2..0.2));
            m.b2 = r.gen_range(-0.2..0.2);
            (g, m, s)
        })
        .find(|(g, m, _)| kink_margin(m, g) >= margin)
        .expect("some seed clears the margin")
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter, with the number of parameters and the
/// seed actually used.
pub fn gradient_check(n: usize, d: usize, hidden: usize, seed: u64, h: f64) -> (f64, usize, u64) {
    let (g, model, used) = kink_free_instance(n, d, hidden, seed, 1e-3);
    let mut r = rng(used + 1);
    let labels: Vec<(usize, u8)> = (0..n).map(|v| (v, u8::from(r.gen_bool(0.4)))).collect();
    let (_, grads) = backward(&model, &g, &labels).unwrap();
    let analytic = grads.flat();
    let base = model.flat();
    let loss_at = |theta: &[f64]| {
        let mut m = model.clone();
        m.set_flat(theta);
        let p = forward_propagated(&m, &g).unwrap();
        bce_loss(p.as_slice().unwrap(), &labels).unwrap()
    };
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += h;
        minus[i] -= h;
        let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    (worst, base.len(), used)
}

/// Scores in [0, 1] rounded to two decimals so that ties are common.
pub fn tied_scores(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| (rng.gen_range(0.0..1.0f64) * 100.0).round() / 100.0)
        .collect()
}

/// Labels with at least one member of each class.
pub fn two_class_labels(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(p))).collect();
    y[0] = 1;
    y[n - 1] = 0;
    y
}

/// Pair-counting AUROC.
pub fn auroc_pairs(s: &[f64], y: &[u8]) -> f64 {
    let (mut hit, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                if s[i] > s[j] {
                    hit += 1.0;
                } else if s[i] == s[j] {
                    hit += 0.5;
                }
            }
        }
    }
    hit / pairs
}

/// Step-sum average precision: each distinct threshold contributes its
/// precision times the recall it adds.
pub fn ap_direct(s: &[f64], y: &[u8]) -> f64 {
    let n_pos = y.iter().filter(|&&l| l == 1).count() as f64;
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 1).count() as f64;
        let pred = (0..s.len()).filter(|&i| s[i] >= t).count() as f64;
        let recall = tp / n_pos;
        ap += (recall - prev_recall) * (tp / pred);
        prev_recall = recall;
    }
    ap
}

pub fn macro_f1_confusion(s: &[f64], y: &[u8], threshold: f64) -> f64 {
    let mut m = [[0usize; 2]; 2];
    for i in 0..s.len() {
        m[y[i] as usize][usize::from(s[i] >= threshold)] += 1;
    }
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    };
    (f1(m[1][1], m[0][1], m[1][0]) + f1(m[0][0], m[1][0], m[0][1])) / 2.0
}

/// Enumerate every projected edge, keep cross-partition ones, sort by gap
/// then ids, keep `s`.
pub fn suspicious_oracle(
    edges: &[(usize, usize)],
    z: &[f64],
    tau_h: f64,
    tau_l: f64,
    s: usize,
) -> Vec<((usize, usize), f64)> {
    let mut out = Vec::new();
    for &(a, b) in edges {
        let (u, v) = (a.min(b), a.max(b));
        let hi = |w: usize| z[w] > tau_h;
        let lo = |w: usize| z[w] < tau_l;
        if (hi(u) && lo(v)) || (lo(u) && hi(v)) {
            out.push(((u, v), (z[u] - z[v]).abs()));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out.dedup_by_key(|e| e.0);
    out.truncate(s);
    out
}

/// The five-node camouflage fixture and its hand-derived statistics.
///
/// Nodes 0 and 3 are fraud, 1 and 2 benign, 4 unlabeled. Features are 2-d,
/// so the default bandwidth is 1/2.
///
/// Relation `r0`: 0-1, 0-3, 3-4. Relation `r1`: 0-2, 1-3.
///
/// Squared distances: |x0-x1|² = 1, |x0-x3|² = 2, |x3-x4|² = 2,
/// |x0-x2|² = 4, |x1-x3|² = 1.
pub struct Camouflage {
    pub graph: HeteroGraph,
    pub features: NodeFeatures,
    pub labels: LabelStore,
}

pub fn camouflage_fixture() -> Camouflage {
    let graph = HeteroGraph::new(
        5,
        vec![
            ("r0".into(), vec![(0, 1), (0, 3), (3, 4)]),
            ("r1".into(), vec![(0, 2), (1, 3)]),
        ],
    )
    .unwrap();
    let features = NodeFeatures::from_rows(vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 2.0],
        vec![1.0, 1.0],
        vec![2.0, 2.0],
    ])
    .unwrap();
    let labels = LabelStore::from_ground_truth(5, [(0, 1), (1, 0), (2, 0), (3, 1)]).unwrap();
    Camouflage {
        graph,
        features,
        labels,
    }
}

/// `(relation, behavior, connection)` derived by hand for the fixture.
///
/// r0: node 0 sees {1, 3}: (e^-1/2 + e^-1)/2, fraud share 1/2.
///     node 3 sees {0, 4}: (e^-1 + e^-1)/2,   fraud share 1/2.
/// r1: node 0 sees {2}: e^-2, share 0.  node 3 sees {1}: e^-1/2, share 0.
/// ALL: node 0 sees {1, 2, 3}: (e^-1/2 + e^-2 + e^-1)/3, share 1/3.
///      node 3 sees {0, 1, 4}: (e^-1 + e^-1/2 + e^-1)/3, share 1/3.
pub fn camouflage_expected() -> Vec<(&'static str, f64, f64)> {
    let e = |x: f64| (-x).exp();
    vec![
        ("r0", ((e(0.5) + e(1.0)) / 2.0 + e(1.0)) / 2.0, 0.5),
        ("r1", (e(2.0) + e(0.5)) / 2.0, 0.0),
        (
            "ALL",
            ((e(0.5) + e(2.0) + e(1.0)) / 3.0 + (2.0 * e(1.0) + e(0.5)) / 3.0) / 2.0,
            1.0 / 3.0,
        ),
    ]
}

pub fn small_synth(n: usize, seed: u64, trace_signal: f64) -> SynthOutput {
    generate_synthetic(&SynthConfig {
        n_nodes: n,
        seed,
        trace_signal,
        ..Default::default()
    })
    .unwrap()
}

/// Features-only propagated graph for a generated instance, with the test
/// split held out of pseudo-labeling.
pub fn synth_selftrain_input(
    n: usize,
    seed: u64,
) -> (
    l2ir::gnn::Propagated,
    LabelStore,
    std::collections::BTreeSet<usize>,
) {
    use l2ir::eval::synth::Split;
    use l2ir::pipeline::{adjacency, concat_features};
    let out = small_synth(n, seed, 0.8);
    let b = &out.bundle;
    let g = Propagated::new(
        adjacency(b).unwrap(),
        concat_features(&b.features, &[]).view(),
    )
    .unwrap();
    let test = out.truth.nodes_in(Split::Test).into_iter().collect();
    (g, b.labels.clone(), test)
}

/// Checks the self-training invariants on one run and returns the number
/// of pseudo-labels added, or the first violation.
pub fn check_selftrain_invariants(
    g: &Propagated,
    ls: &LabelStore,
    exclude: &std::collections::BTreeSet<usize>,
    cfg: &l2ir::selftrain::SelfTrainConfig,
) -> Result<usize, String> {
    use l2ir::graph::Provenance;
    let out =
        l2ir::selftrain::run_self_training(g, ls, cfg, exclude, None).map_err(|e| e.to_string())?;
    let rounds = &out.log.rounds;
    if rounds.len() != cfg.rounds() {
        return Err(format!("{} rounds logged", rounds.len()));
    }
    let mut labeled: std::collections::BTreeSet<usize> = ls.labeled().map(|(v, _)| v).collect();
    let mut added = 0;
    for (t, r) in rounds.iter().enumerate() {
        if r.seed != cfg.train_config().seed + t as u64 {
            return Err(format!("round {t} seed {}", r.seed));
        }
        if r.n_labeled != labeled.len() {
            return Err(format!(
                "round {t}: trained on {} labels, expected {}",
                r.n_labeled,
                labeled.len()
            ));
        }
        let f: std::collections::BTreeSet<_> = r.pseudo_fraud.iter().copied().collect();
        if r.pseudo_benign.iter().any(|v| f.contains(v)) {
            return Err(format!("round {t}: pseudo sets overlap"));
        }
        for &v in r.pseudo_fraud.iter().chain(&r.pseudo_benign) {
            if labeled.contains(&v) {
                return Err(format!("round {t}: node {v} relabeled"));
            }
            if exclude.contains(&v) {
                return Err(format!("round {t}: held-out node {v} pseudo-labeled"));
            }
        }
        if t + 1 < rounds.len() {
            // V_L^(t) ⊆ V_L^(t+1): the next round sees everything plus the new sets.
            labeled.extend(r.pseudo_fraud.iter().chain(&r.pseudo_benign));
            added += r.pseudo_fraud.len() + r.pseudo_benign.len();
        }
    }
    for (v, y) in ls.labeled() {
        if out.labels.label(v) != Some(y)
            || out.labels.provenance(v) != Some(Provenance::GroundTruth)
        {
            return Err(format!("ground truth of node {v} changed"));
        }
    }
    if out.labels.len() != labeled.len() {
        return Err(format!(
            "final store has {} labels, expected {}",
            out.labels.len(),
            labeled.len()
        ));
    }
    Ok(added)
}

/// Artifacts of one mock-backed pipeline run, in their on-disk encodings.
pub struct RunArtifacts {
    pub z_json: String,
    pub h_bin: Vec<u8>,
    pub model: Vec<u8>,
    pub scores: Vec<f64>,
    pub backend_calls: usize,
}

/// Runs the full pipeline on `bundle` with a counting mock backend and the
/// given completion cache directory.
pub fn mock_run(
    bundle: &l2ir::graph::GraphBundle,
    cfg: &l2ir::pipeline::PipelineConfig,
    cache: &std::path::Path,
) -> RunArtifacts {
    use l2ir::intent::{CompletionCache, CountingBackend, HashingEncoder, LlmClient, MockBackend};
    use std::sync::Arc;
    let backend = Arc::new(CountingBackend::new(MockBackend::new()));
    let client = LlmClient::new(backend.clone()).with_cache(CompletionCache::new(cache));
    let enc = HashingEncoder::new(cfg.embed_dim);
    let out = l2ir::pipeline::run_pipeline(
        bundle,
        &client,
        &enc,
        cfg,
        &l2ir::pipeline::EvalSplit::default(),
        None,
    )
    .unwrap();
    RunArtifacts {
        z_json: out.z.to_json(),
        h_bin: out.fused.to_bytes(),
        model: out.model.to_bytes(),
        scores: out.scores,
        backend_calls: backend.calls(),
    }
}

/// Short-training config for pipeline-level checks.
pub fn quick_config() -> l2ir::pipeline::PipelineConfig {
    let train = l2ir::gnn::TrainConfig {
        epochs: 30,
        ..Default::default()
    };
    l2ir::pipeline::PipelineConfig {
        train: train.clone(),
        selftrain: l2ir::selftrain::SelfTrainConfig::new(0.9, 0.95, 2, train).unwrap(),
        ..Default::default()
    }
}
