//! Self-training with per-round re-initialization and asymmetric
//! pseudo-label thresholds.

use crate::eval::MetricReport;
use crate::gnn::{forward_propagated, train, GnnError, GnnModel, Propagated, TrainConfig};
use crate::graph::{LabelError, LabelStore};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

pub const DEFAULT_TAU_FRAUD: f64 = 0.90;
pub const DEFAULT_TAU_BENIGN: f64 = 0.95;
pub const DEFAULT_ROUNDS: usize = 3;

#[derive(Debug, Error)]
pub enum SelfTrainError {
    #[error("invalid self-training config: {0}")]
    Config(String),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: GnnError,
        /// Rounds completed before the failure.
        log: RoundLog,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainConfig {
    tau_fraud: f64,
    tau_benign: f64,
    rounds: usize,
    train: TrainConfig,
    discard_pseudo: bool,
}

impl SelfTrainConfig {
    /// Requires `tau_benign > tau_fraud`, `tau_fraud + tau_benign > 1` and
    /// at least one round.
    pub fn new(
        tau_fraud: f64,
        tau_benign: f64,
        rounds: usize,
        train: TrainConfig,
    ) -> Result<Self, SelfTrainError> {
        let bad = |m: String| Err(SelfTrainError::Config(m));
        if !(0.0..=1.0).contains(&tau_fraud) || !(0.0..=1.0).contains(&tau_benign) {
            return bad(format!(
                "thresholds must lie in [0, 1] (tau_fraud={tau_fraud}, tau_benign={tau_benign})"
            ));
        }
        if tau_benign <= tau_fraud {
            return bad(format!(
                "tau_benign ({tau_benign}) must exceed tau_fraud ({tau_fraud})"
            ));
        }
        if tau_fraud + tau_benign <= 1.0 {
            return bad(format!(
                "tau_fraud + tau_benign must exceed 1 (got {})",
                tau_fraud + tau_benign
            ));
        }
        if rounds == 0 {
            return bad("at least one round is required".into());
        }
        Ok(Self {
            tau_fraud,
            tau_benign,
            rounds,
            train,
            discard_pseudo: false,
        })
    }

    /// When set, each round's pseudo-labels replace the previous round's
    /// instead of accumulating.
    pub fn with_discard_pseudo(mut self, discard: bool) -> Self {
        self.discard_pseudo = discard;
        self
    }

    pub fn tau_fraud(&self) -> f64 {
        self.tau_fraud
    }

    pub fn tau_benign(&self) -> f64 {
        self.tau_benign
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train
    }

    pub fn discard_pseudo(&self) -> bool {
        self.discard_pseudo
    }
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self::new(
            DEFAULT_TAU_FRAUD,
            DEFAULT_TAU_BENIGN,
            DEFAULT_ROUNDS,
            TrainConfig::default(),
        )
        .expect("valid defaults")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub round: usize,
    pub seed: u64,
    pub losses: Vec<f64>,
    /// Labels trained on this round.
    pub n_labeled: usize,
    pub pseudo_fraud: Vec<usize>,
    pub pseudo_benign: Vec<usize>,
    pub holdout: Option<MetricReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub rounds: Vec<RoundEntry>,
}

/// `(V̂₁, V̂₀)`: candidates with `p >= tau_fraud` and with
/// `1 - p >= tau_benign`.
pub fn generate_pseudo_labels(
    p: &[f64],
    candidates: &[usize],
    cfg: &SelfTrainConfig,
) -> (Vec<usize>, Vec<usize>) {
    let fraud = candidates
        .iter()
        .copied()
        .filter(|&v| p[v] >= cfg.tau_fraud)
        .collect();
    let benign = candidates
        .iter()
        .copied()
        .filter(|&v| 1.0 - p[v] >= cfg.tau_benign)
        .collect();
    (fraud, benign)
}

/// Adds both pseudo sets to the store with round provenance `t`.
pub fn expand_labels(
    ls: &mut LabelStore,
    fraud: &[usize],
    benign: &[usize],
    t: usize,
) -> Result<(), LabelError> {
    for &v in fraud {
        if ls.is_labeled(v) {
            return Err(LabelError::AlreadyLabeled(v));
        }
    }
    for &v in benign {
        if ls.is_labeled(v) {
            return Err(LabelError::AlreadyLabeled(v));
        }
    }
    for &v in fraud {
        ls.insert_pseudo(v, 1, t)?;
    }
    for &v in benign {
        ls.insert_pseudo(v, 0, t)?;
    }
    ls.set_round(t + 1);
    Ok(())
}

/// Optional held-out set scored after every round.
#[derive(Debug, Clone, Copy)]
pub struct Holdout<'a> {
    pub nodes: &'a [usize],
    pub labels: &'a [u8],
}

/// Result of a self-training run.
#[derive(Debug, Clone)]
pub struct SelfTrainOutcome {
    pub model: GnnModel,
    pub log: RoundLog,
    pub labels: LabelStore,
}

/// Trains `cfg.rounds()` models, each from a fresh init seeded
/// `base_seed + t`, expanding the label set with confident predictions
/// between rounds. Nodes in `exclude` are never pseudo-labeled. Returns the
/// last round's model.
pub fn run_self_training(
    g: &Propagated,
    ls: &LabelStore,
    cfg: &SelfTrainConfig,
    exclude: &BTreeSet<usize>,
    holdout: Option<Holdout<'_>>,
) -> Result<SelfTrainOutcome, SelfTrainError> {
    let mut labels = ls.clone();
    let mut log = RoundLog::default();
    let mut model = None;
    for t in 0..cfg.rounds {
        let seed = cfg.train.seed.wrapping_add(t as u64);
        let train_cfg = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let current: Vec<(usize, u8)> = labels.labeled().collect();
        let fail = |source, log: &RoundLog| SelfTrainError::Round {
            round: t,
            source,
            log: log.clone(),
        };
        let (m, tlog) = train(g, &current, &train_cfg).map_err(|e| fail(e, &log))?;
        let p = forward_propagated(&m, g)
            .map_err(|e| fail(e, &log))?
            .to_vec();

        if cfg.discard_pseudo {
            labels = labels.ground_truth_only();
            labels.set_round(t);
        }
        let candidates: Vec<usize> = labels
            .unlabeled()
            .into_iter()
            .filter(|v| !exclude.contains(v))
            .collect();
        let (fraud, benign) = generate_pseudo_labels(&p, &candidates, cfg);
        let holdout_report = holdout.and_then(|h| {
            let scores: Vec<f64> = h.nodes.iter().map(|&v| p[v]).collect();
            MetricReport::compute(&scores, h.labels, 0.5).ok()
        });
        log.rounds.push(RoundEntry {
            round: t,
            seed,
            losses: tlog.epoch_losses,
            n_labeled: current.len(),
            pseudo_fraud: fraud.clone(),
            pseudo_benign: benign.clone(),
            holdout: holdout_report,
        });
        log::info!(
            "self-training round {t}: {} labels, +{} fraud, +{} benign pseudo-labels",
            current.len(),
            fraud.len(),
            benign.len()
        );
        if t + 1 < cfg.rounds {
            expand_labels(&mut labels, &fraud, &benign, t)?;
        }
        model = Some(m);
    }
    Ok(SelfTrainOutcome {
        model: model.expect("at least one round"),
        log,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_invariants() {
        assert!(SelfTrainConfig::new(0.4, 0.5, 3, TrainConfig::default()).is_err());
        assert!(SelfTrainConfig::new(0.95, 0.90, 3, TrainConfig::default()).is_err());
        assert!(SelfTrainConfig::new(0.9, 0.95, 0, TrainConfig::default()).is_err());
        assert!(SelfTrainConfig::new(0.9, 0.95, 3, TrainConfig::default()).is_ok());
    }

    #[test]
    fn pseudo_label_thresholds() {
        let cfg = SelfTrainConfig::default();
        let (f, b) = generate_pseudo_labels(&[0.91, 0.50, 0.04], &[0, 1, 2], &cfg);
        assert_eq!((f, b), (vec![0], vec![2]));
        let (f, _) = generate_pseudo_labels(&[0.90], &[0], &cfg);
        assert_eq!(f, vec![0]);
        let (f, b) = generate_pseudo_labels(&[0.2, 0.6, 0.89], &[0, 1, 2], &cfg);
        assert!(f.is_empty() && b.is_empty());
    }

    #[test]
    fn expansion_is_additive_and_guarded() {
        let mut ls = LabelStore::from_ground_truth(6, [(0, 1), (1, 0)]).unwrap();
        expand_labels(&mut ls, &[], &[], 0).unwrap();
        assert_eq!(ls.len(), 2);
        expand_labels(&mut ls, &[2], &[3, 4], 1).unwrap();
        assert_eq!(ls.len(), 5);
        assert_eq!(
            expand_labels(&mut ls, &[0], &[], 2),
            Err(LabelError::AlreadyLabeled(0))
        );
        assert_eq!(ls.label(0), Some(1));
        assert_eq!(ls.len(), 5);
    }
}
