//! Camouflage statistics over fraud nodes and their neighborhoods.

use super::{GraphError, HeteroGraph, LabelStore, NodeFeatures, RelationSel};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatError {
    #[error("no fraud node has a neighbor under relation `{0}`")]
    Empty(String),
    #[error("invalid rbf bandwidth {0}")]
    Bandwidth(f64),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Mean over fraud nodes `v` of the mean over neighbors `u` of
/// `exp(-gamma * ||x_v - x_u||^2)`. `gamma` defaults to `1/d`.
pub fn behavior_similarity(
    g: &HeteroGraph,
    f: &NodeFeatures,
    ls: &LabelStore,
    sel: &RelationSel,
    gamma: Option<f64>,
) -> Result<f64, StatError> {
    let gamma = gamma.unwrap_or(1.0 / f.dim().max(1) as f64);
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(StatError::Bandwidth(gamma));
    }
    let adj = g.neighbors(sel)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for v in ls.class_members(1) {
        let nbrs = &adj[v];
        if nbrs.is_empty() {
            continue;
        }
        let xv = f.row(v);
        let mean = nbrs
            .iter()
            .map(|&u| {
                let d2: f64 = xv
                    .iter()
                    .zip(f.row(u))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (-gamma * d2).exp()
            })
            .sum::<f64>()
            / nbrs.len() as f64;
        total += mean;
        count += 1;
    }
    if count == 0 {
        return Err(StatError::Empty(sel.to_string()));
    }
    Ok(total / count as f64)
}

/// Mean over fraud nodes of the fraction of their neighbors labeled fraud.
/// Unlabeled neighbors count as non-fraud.
pub fn connection_similarity(
    g: &HeteroGraph,
    ls: &LabelStore,
    sel: &RelationSel,
) -> Result<f64, StatError> {
    let adj = g.neighbors(sel)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for v in ls.class_members(1) {
        let nbrs = &adj[v];
        if nbrs.is_empty() {
            continue;
        }
        let fraud = nbrs.iter().filter(|&&u| ls.label(u) == Some(1)).count();
        total += fraud as f64 / nbrs.len() as f64;
        count += 1;
    }
    if count == 0 {
        return Err(StatError::Empty(sel.to_string()));
    }
    Ok(total / count as f64)
}
