//! Two-layer GCN with analytic gradients, Adam training and out-of-fold
//! ensemble scoring.

pub mod model;
pub mod oof;
pub mod train;

use crate::graph::Edge;
use thiserror::Error;

pub use model::{
    backward, bce_loss, forward, forward_propagated, sigmoid, GnnModel, Grads, NormAdj, Propagated,
};
pub use oof::{kfold_oof_scores, stratified_folds, OofTrace, RiskScores, ScoreProvenance};
pub use train::{train, TrainConfig, TrainLog};

#[derive(Debug, Error, PartialEq)]
pub enum GnnError {
    #[error("edge {edge:?} out of range for {n} nodes")]
    EdgeOutOfRange { edge: Edge, n: usize },
    #[error("feature dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("row count mismatch: expected {expected}, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("empty label set")]
    EmptyLabels,
    #[error("labeled node {0} out of range")]
    LabelOutOfRange(usize),
    #[error("degenerate supervision: {positives} positive and {negatives} negative labels")]
    DegenerateSupervision { positives: usize, negatives: usize },
    #[error("{folds} folds need at least {folds} labels of each class (minority has {minority})")]
    TooManyFolds { folds: usize, minority: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training produced non-finite parameters")]
    NonFinite,
    #[error("decode: {0}")]
    Decode(String),
}
