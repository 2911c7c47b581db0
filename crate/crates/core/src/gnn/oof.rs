use super::model::{forward_propagated, Propagated};
use super::train::{train, TrainConfig};
use super::GnnError;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io;
use std::path::Path;

pub const DEFAULT_FOLDS: usize = 5;

/// Which model(s) produced a node's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreProvenance {
    OofFold(usize),
    EnsembleMean,
}

/// Preliminary per-node fraud probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScores {
    #[serde(rename = "scores")]
    pub z: Vec<f64>,
    pub provenance: Vec<ScoreProvenance>,
}

impl RiskScores {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scores serialize")
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Bookkeeping of one out-of-fold run, kept for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct OofTrace {
    /// Validation fold of each node; `None` for unlabeled nodes.
    pub fold_of: Vec<Option<usize>>,
    /// Training node set of each fold model.
    pub train_sets: Vec<Vec<usize>>,
    /// Full prediction vector of each fold model.
    pub fold_predictions: Vec<Vec<f64>>,
}

impl OofTrace {
    /// Labeled nodes whose score came from a model that trained on them.
    pub fn purity_violations(&self, scores: &RiskScores) -> Vec<usize> {
        let mut out = Vec::new();
        for (v, p) in scores.provenance.iter().enumerate() {
            if let ScoreProvenance::OofFold(f) = *p {
                if self.train_sets[f].binary_search(&v).is_ok() || self.fold_of[v] != Some(f) {
                    out.push(v);
                }
            }
        }
        out
    }
}

/// Assigns each labeled node to one of `k` folds, shuffling each class
/// separately and dealing round-robin so every fold holds both classes.
pub fn stratified_folds(
    labels: &[(usize, u8)],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<(usize, u8)>>, GnnError> {
    if k < 2 {
        return Err(GnnError::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: [Vec<(usize, u8)>; 2] = [Vec::new(), Vec::new()];
    for &(v, y) in labels {
        by_class[usize::from(y == 1)].push((v, y));
    }
    let minority = by_class[0].len().min(by_class[1].len());
    if minority < k {
        return Err(GnnError::TooManyFolds { folds: k, minority });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    for class in &mut by_class {
        class.sort_unstable();
        class.shuffle(&mut rng);
        for (i, &entry) in class.iter().enumerate() {
            folds[i % k].push(entry);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Out-of-fold scoring: fold model `f` trains on every fold but `f` with
/// seed `cfg.seed + f`. Labeled nodes take their own fold model's
/// prediction; unlabeled nodes take the mean over all fold models.
pub fn kfold_oof_scores(
    g: &Propagated,
    labels: &[(usize, u8)],
    k: usize,
    cfg: &TrainConfig,
) -> Result<(RiskScores, OofTrace), GnnError> {
    let n = g.node_count();
    if let Some(&(v, _)) = labels.iter().find(|&&(v, _)| v >= n) {
        return Err(GnnError::LabelOutOfRange(v));
    }
    let folds = stratified_folds(labels, k, cfg.seed)?;
    let mut fold_of = vec![None; n];
    for (f, members) in folds.iter().enumerate() {
        for &(v, _) in members {
            fold_of[v] = Some(f);
        }
    }
    let train_sets: Vec<Vec<(usize, u8)>> = (0..k)
        .map(|f| {
            let mut s: Vec<_> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != f)
                .flat_map(|(_, m)| m.iter().copied())
                .collect();
            s.sort_unstable();
            s
        })
        .collect();
    let fold_predictions: Vec<Vec<f64>> = train_sets
        .par_iter()
        .enumerate()
        .map(|(f, set)| {
            let fold_cfg = TrainConfig {
                seed: cfg.seed.wrapping_add(f as u64),
                ..cfg.clone()
            };
            let (model, _) = train(g, set, &fold_cfg)?;
            Ok(forward_propagated(&model, g)?.to_vec())
        })
        .collect::<Result<_, GnnError>>()?;

    let mut z = vec![0.0; n];
    let mut provenance = vec![ScoreProvenance::EnsembleMean; n];
    for v in 0..n {
        match fold_of[v] {
            Some(f) => {
                z[v] = fold_predictions[f][v];
                provenance[v] = ScoreProvenance::OofFold(f);
            }
            None => z[v] = fold_predictions.iter().map(|p| p[v]).sum::<f64>() / k as f64,
        }
    }
    let trace = OofTrace {
        fold_of,
        train_sets: train_sets
            .into_iter()
            .map(|s| s.into_iter().map(|(v, _)| v).collect())
            .collect(),
        fold_predictions,
    };
    Ok((RiskScores { z, provenance }, trace))
}
