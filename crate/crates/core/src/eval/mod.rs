//! Ranking and classification metrics, class-balance resampling and the
//! synthetic camouflaged-graph generator.

pub mod metrics;
pub mod synth;

pub use metrics::{
    auprc, auroc, macro_f1, pr_curve, roc_curve, CurvePoint, MetricError, MetricReport,
};
pub use synth::{generate_synthetic, SynthConfig, SynthError, SynthOutput};

use crate::graph::LabelStore;
use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("ratio {0}:{1} must have positive parts")]
    BadRatio(usize, usize),
    #[error("ratio {ratio:?} unattainable with {positives} positives and {negatives} negatives")]
    Unattainable {
        ratio: (usize, usize),
        positives: usize,
        negatives: usize,
    },
}

fn pick<R: Rng>(pool: &[(usize, u8)], amount: usize, rng: &mut R) -> Vec<(usize, u8)> {
    if amount >= pool.len() {
        return pool.to_vec();
    }
    let mut idx = index::sample(rng, pool.len(), amount).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i]).collect()
}

/// Keeps every positive and samples negatives to hit `pos:neg`; when the
/// negatives are too few, keeps every negative and samples positives instead.
/// Output is sorted by node id. Classes that are empty stay empty.
pub fn balanced_subsample<R: Rng>(
    labels: &[(usize, u8)],
    ratio: (usize, usize),
    rng: &mut R,
) -> Vec<(usize, u8)> {
    let (p, q) = (ratio.0.max(1), ratio.1.max(1));
    let mut pos: Vec<_> = labels.iter().copied().filter(|&(_, y)| y == 1).collect();
    let mut neg: Vec<_> = labels.iter().copied().filter(|&(_, y)| y != 1).collect();
    pos.sort_unstable();
    neg.sort_unstable();
    let want_neg = pos.len() * q / p;
    let mut out = if want_neg <= neg.len() {
        let mut s = pick(&neg, want_neg, rng);
        s.extend(pos);
        s
    } else {
        let want_pos = neg.len() * p / q;
        let mut s = pick(&pos, want_pos, rng);
        s.extend(neg);
        s
    };
    out.sort_unstable();
    out
}

/// Seeded class-balanced view of a label store's labeled nodes.
pub fn undersample(
    ls: &LabelStore,
    ratio: (usize, usize),
    seed: u64,
) -> Result<Vec<(usize, u8)>, SampleError> {
    if ratio.0 == 0 || ratio.1 == 0 {
        return Err(SampleError::BadRatio(ratio.0, ratio.1));
    }
    let labels: Vec<_> = ls.labeled().collect();
    let positives = labels.iter().filter(|&&(_, y)| y == 1).count();
    let negatives = labels.len() - positives;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = balanced_subsample(&labels, ratio, &mut rng);
    let kept_pos = out.iter().filter(|&&(_, y)| y == 1).count();
    if kept_pos == 0 || kept_pos == out.len() {
        return Err(SampleError::Unattainable {
            ratio,
            positives,
            negatives,
        });
    }
    Ok(out)
}
