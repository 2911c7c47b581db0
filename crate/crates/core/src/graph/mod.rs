//! Multi-relation graph container, node attributes and label bookkeeping.
//!
//! Node ids are dense integers `0..N` assigned at ingest. Edges are undirected
//! and stored as `(min, max)` pairs, one sorted list per relation. The
//! homogeneous projection collapses all relations into one untyped edge set.

mod io;
mod stats;

pub use io::{
    load_graph, parse_graph, EdgeRecord, GraphBundle, IngestError, NodeRecord, TraceRecordJson,
};
pub use stats::{behavior_similarity, connection_similarity, StatError};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// An undirected edge stored as `(min_id, max_id)`.
pub type Edge = (usize, usize);

/// Normalizes an unordered pair to `(min, max)`.
#[inline]
pub fn ordered(u: usize, v: usize) -> Edge {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("self-loop on node {0} in relation `{1}`")]
    SelfLoop(usize, String),
    #[error("edge endpoint {endpoint} out of range for {node_count} nodes")]
    EndpointOutOfRange { endpoint: usize, node_count: usize },
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("feature row {row} has dimension {found}, expected {expected}")]
    FeatureDim {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("expected {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
}

/// Selects one relation or the homogeneous projection over all of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationSel {
    All,
    Named(String),
}

impl RelationSel {
    pub fn parse(s: &str) -> Self {
        if s.eq_ignore_ascii_case("all") {
            RelationSel::All
        } else {
            RelationSel::Named(s.to_string())
        }
    }
}

impl fmt::Display for RelationSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelationSel::All => f.write_str("ALL"),
            RelationSel::Named(r) => f.write_str(r),
        }
    }
}

/// Heterogeneous undirected graph `G = (V, E, R)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeteroGraph {
    node_count: usize,
    relations: Vec<String>,
    adjacency: Vec<Vec<Edge>>,
}

impl HeteroGraph {
    /// Builds a graph from raw per-relation edge lists. Duplicate pairs are
    /// collapsed, self-loops and out-of-range endpoints are rejected.
    pub fn new(
        node_count: usize,
        relations: Vec<(String, Vec<(usize, usize)>)>,
    ) -> Result<Self, GraphError> {
        let mut names = Vec::with_capacity(relations.len());
        let mut adjacency = Vec::with_capacity(relations.len());
        for (name, edges) in relations {
            let mut set = BTreeSet::new();
            for (u, v) in edges {
                for endpoint in [u, v] {
                    if endpoint >= node_count {
                        return Err(GraphError::EndpointOutOfRange {
                            endpoint,
                            node_count,
                        });
                    }
                }
                if u == v {
                    return Err(GraphError::SelfLoop(u, name));
                }
                set.insert(ordered(u, v));
            }
            names.push(name);
            adjacency.push(set.into_iter().collect());
        }
        Ok(Self {
            node_count,
            relations: names,
            adjacency,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    /// Sorted, deduplicated edges of one relation.
    pub fn relation_edges(&self, name: &str) -> Result<&[Edge], GraphError> {
        self.relations
            .iter()
            .position(|r| r == name)
            .map(|i| self.adjacency[i].as_slice())
            .ok_or_else(|| GraphError::UnknownRelation(name.to_string()))
    }

    /// `E_homo`: the sorted union of all per-relation edge sets.
    pub fn homogeneous_projection(&self) -> Vec<Edge> {
        let set: BTreeSet<Edge> = self.adjacency.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    /// Edges under a relation selector.
    pub fn edges(&self, sel: &RelationSel) -> Result<Vec<Edge>, GraphError> {
        match sel {
            RelationSel::All => Ok(self.homogeneous_projection()),
            RelationSel::Named(name) => Ok(self.relation_edges(name)?.to_vec()),
        }
    }

    /// Sorted neighbor lists under a relation selector.
    pub fn neighbors(&self, sel: &RelationSel) -> Result<Vec<Vec<usize>>, GraphError> {
        Ok(neighbor_lists(self.node_count, &self.edges(sel)?))
    }
}

/// Sorted adjacency lists for an undirected edge list.
pub fn neighbor_lists(node_count: usize, edges: &[Edge]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); node_count];
    for &(u, v) in edges {
        out[u].push(v);
        out[v].push(u);
    }
    for list in &mut out {
        list.sort_unstable();
        list.dedup();
    }
    out
}

/// Row-major statistical feature matrix `X`, `N x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    dim: usize,
    values: Vec<f64>,
}

impl NodeFeatures {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, GraphError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(GraphError::FeatureDim {
                    row,
                    found: r.len(),
                    expected: dim,
                });
            }
            if let Some(col) = r.iter().position(|x| !x.is_finite()) {
                return Err(GraphError::NonFiniteFeature { row, col });
            }
            values.extend_from_slice(r);
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.values[v * self.dim..(v + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// One review/interaction record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub item_id: String,
    /// Unix seconds.
    pub timestamp: i64,
    pub rating: u8,
    pub text: String,
    pub helpfulness: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("rating {0} outside 1..=5")]
    Rating(u8),
    #[error("non-finite helpfulness")]
    Helpfulness,
}

/// Chronologically sorted behavior trace `T_v`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BehaviorTrace {
    records: Vec<TraceRecord>,
}

impl BehaviorTrace {
    /// Validates ratings and sorts records by timestamp (stable, so equal
    /// timestamps keep input order).
    pub fn new(mut records: Vec<TraceRecord>) -> Result<Self, TraceError> {
        for r in &records {
            if !(1..=5).contains(&r.rating) {
                return Err(TraceError::Rating(r.rating));
            }
            if !r.helpfulness.is_finite() {
                return Err(TraceError::Helpfulness);
            }
        }
        records.sort_by_key(|r| r.timestamp);
        Ok(Self { records })
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// `I_v`: the set of interacted items.
    pub fn item_set(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.item_id.as_str()).collect()
    }

    pub fn mean_rating(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        Some(self.records.iter().map(|r| r.rating as f64).sum::<f64>() / self.records.len() as f64)
    }

    /// Concatenated review texts, space separated.
    pub fn joined_text(&self) -> String {
        self.records
            .iter()
            .map(|r| r.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Where a label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    GroundTruth,
    Pseudo { round: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("node {0} out of range")]
    OutOfRange(usize),
    #[error("label {0} is not binary")]
    NotBinary(u8),
    #[error("node {0} is already labeled")]
    AlreadyLabeled(usize),
}

/// Labeled/unlabeled partition with per-label provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelStore {
    node_count: usize,
    labels: BTreeMap<usize, u8>,
    provenance: BTreeMap<usize, Provenance>,
    round: usize,
}

impl LabelStore {
    pub fn new(node_count: usize) -> Self {
        Self {
            node_count,
            labels: BTreeMap::new(),
            provenance: BTreeMap::new(),
            round: 0,
        }
    }

    /// Builds a store from ground-truth labels.
    pub fn from_ground_truth(
        node_count: usize,
        labels: impl IntoIterator<Item = (usize, u8)>,
    ) -> Result<Self, LabelError> {
        let mut store = Self::new(node_count);
        for (v, y) in labels {
            store.insert(v, y, Provenance::GroundTruth)?;
        }
        Ok(store)
    }

    fn insert(&mut self, v: usize, y: u8, p: Provenance) -> Result<(), LabelError> {
        if v >= self.node_count {
            return Err(LabelError::OutOfRange(v));
        }
        if y > 1 {
            return Err(LabelError::NotBinary(y));
        }
        if self.labels.contains_key(&v) {
            return Err(LabelError::AlreadyLabeled(v));
        }
        self.labels.insert(v, y);
        self.provenance.insert(v, p);
        Ok(())
    }

    /// Adds a pseudo-label for round `round`. Fails on already-labeled nodes,
    /// which keeps ground truth immutable.
    pub fn insert_pseudo(&mut self, v: usize, y: u8, round: usize) -> Result<(), LabelError> {
        self.insert(v, y, Provenance::Pseudo { round })
    }

    /// Copy of this store restricted to ground-truth labels.
    pub fn ground_truth_only(&self) -> Self {
        let mut out = Self::new(self.node_count);
        for (&v, &y) in &self.labels {
            if self.provenance[&v] == Provenance::GroundTruth {
                out.labels.insert(v, y);
                out.provenance.insert(v, Provenance::GroundTruth);
            }
        }
        out.round = self.round;
        out
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn set_round(&mut self, round: usize) {
        self.round = round;
    }

    pub fn label(&self, v: usize) -> Option<u8> {
        self.labels.get(&v).copied()
    }

    pub fn provenance(&self, v: usize) -> Option<Provenance> {
        self.provenance.get(&v).copied()
    }

    pub fn is_labeled(&self, v: usize) -> bool {
        self.labels.contains_key(&v)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(node, label)` pairs in ascending node order.
    pub fn labeled(&self) -> impl Iterator<Item = (usize, u8)> + '_ {
        self.labels.iter().map(|(&v, &y)| (v, y))
    }

    /// Labeled nodes of one class, ascending.
    pub fn class_members(&self, class: u8) -> Vec<usize> {
        self.labeled()
            .filter(|&(_, y)| y == class)
            .map(|(v, _)| v)
            .collect()
    }

    /// `V_U = V \ V_L`, ascending.
    pub fn unlabeled(&self) -> Vec<usize> {
        (0..self.node_count)
            .filter(|v| !self.labels.contains_key(v))
            .collect()
    }

    pub fn count_class(&self, class: u8) -> usize {
        self.labels.values().filter(|&&y| y == class).count()
    }
}
