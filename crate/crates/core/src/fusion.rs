//! Node partitioning by preliminary risk, contradictory-edge selection,
//! connection audits, edge-intent pooling and feature fusion.

use crate::graph::GraphBundle;
use crate::graph::{Edge, NodeFeatures};
use crate::intent::{
    build_audit_prompt, AuditEndpoint, AuditReport, Embedding, LlmClient, LlmError, PromptContext,
    TextEncoder,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_TAU_HIGH: f64 = 0.80;
pub const DEFAULT_TAU_LOW: f64 = 0.20;
pub const DEFAULT_BUDGET: usize = 4000;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("thresholds must satisfy 0 <= tau_l < tau_h <= 1 (got tau_l={tau_l}, tau_h={tau_h})")]
    Thresholds { tau_h: f64, tau_l: f64 },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad fused-feature file: {0}")]
    Format(String),
}

/// Nodes confidently on either side of the preliminary risk band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePartition {
    pub suspected_fraud: Vec<usize>,
    pub suspected_benign: Vec<usize>,
    pub tau_h: f64,
    pub tau_l: f64,
}

impl NodePartition {
    pub fn is_fraud(&self, v: usize) -> bool {
        self.suspected_fraud.binary_search(&v).is_ok()
    }

    pub fn is_benign(&self, v: usize) -> bool {
        self.suspected_benign.binary_search(&v).is_ok()
    }
}

/// Splits nodes into `Z > tau_h` and `Z < tau_l`; the band between belongs
/// to neither side.
pub fn partition_nodes(z: &[f64], tau_h: f64, tau_l: f64) -> Result<NodePartition, FusionError> {
    if !(0.0 <= tau_l && tau_l < tau_h && tau_h <= 1.0) {
        return Err(FusionError::Thresholds { tau_h, tau_l });
    }
    Ok(NodePartition {
        suspected_fraud: (0..z.len()).filter(|&v| z[v] > tau_h).collect(),
        suspected_benign: (0..z.len()).filter(|&v| z[v] < tau_l).collect(),
        tau_h,
        tau_l,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuspiciousEdge {
    pub edge: Edge,
    /// `|Z_u - Z_v|`.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspiciousEdgeSet {
    pub edges: Vec<SuspiciousEdge>,
    pub budget: usize,
}

impl SuspiciousEdgeSet {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Keeps the cross-partition edges with the `s` largest score gaps. Ties
/// are ordered by `(min id, max id)`.
pub fn select_suspicious(
    edges: &[Edge],
    p: &NodePartition,
    z: &[f64],
    s: usize,
) -> SuspiciousEdgeSet {
    let mut out: Vec<SuspiciousEdge> = edges
        .iter()
        .map(|&(u, v)| (u.min(v), u.max(v)))
        .filter(|&(u, v)| (p.is_fraud(u) && p.is_benign(v)) || (p.is_benign(u) && p.is_fraud(v)))
        .map(|edge| SuspiciousEdge {
            edge,
            magnitude: (z[edge.0] - z[edge.1]).abs(),
        })
        .collect();
    out.sort_by(|a, b| {
        b.magnitude
            .partial_cmp(&a.magnitude)
            .unwrap_or(Ordering::Equal)
            .then(a.edge.cmp(&b.edge))
    });
    out.dedup_by_key(|e| e.edge);
    out.truncate(s);
    SuspiciousEdgeSet {
        edges: out,
        budget: s,
    }
}

/// Audits every suspicious edge. Failed completions become degraded
/// reports; the call fails only when every request fails.
pub fn cross_audit(
    es: &SuspiciousEdgeSet,
    bundle: &GraphBundle,
    z: &[f64],
    client: &LlmClient,
    pctx: &PromptContext,
    strict: bool,
) -> Result<Vec<AuditReport>, FusionError> {
    let endpoint = |v: usize| AuditEndpoint {
        node: v,
        uid: &bundle.ids[v],
        score: z[v],
        trace: &bundle.traces[v],
    };
    let prompts: Vec<_> = es
        .edges
        .iter()
        .map(|e| build_audit_prompt(endpoint(e.edge.0), endpoint(e.edge.1), pctx))
        .collect();
    let results = client.complete_all(&prompts);
    let mut last_err = None;
    let mut failures = 0;
    let reports: Vec<AuditReport> = es
        .edges
        .iter()
        .zip(results)
        .map(|(e, r)| match r {
            Ok(text) => AuditReport::from_text(e.edge, text, strict),
            Err(err) => {
                log::warn!("audit of {:?} failed: {err}", e.edge);
                failures += 1;
                last_err = Some(err);
                AuditReport::failed(e.edge)
            }
        })
        .collect();
    if !reports.is_empty() && failures == reports.len() {
        let cause = last_err.map_or_else(String::new, |e| e.to_string());
        return Err(FusionError::Backend(LlmError::BackendDown(cause)));
    }
    Ok(reports)
}

/// Encodes audit reports. Failed audits contribute zero vectors.
pub fn encode_reports(
    reports: &[AuditReport],
    enc: &dyn TextEncoder,
) -> Result<Vec<(Edge, Embedding)>, FusionError> {
    reports
        .iter()
        .map(|r| {
            let e = if r.text.is_empty() {
                Embedding::zeros(enc.dim())
            } else {
                enc.encode(&r.text)?
            };
            Ok((r.edge, e))
        })
        .collect()
}

/// Mean of the embeddings of suspicious edges incident to `v`; the zero
/// vector when there are none.
pub fn pool_edge_intent(
    v: usize,
    edge_embeddings: &[(Edge, Embedding)],
    d_s: usize,
) -> Result<Embedding, FusionError> {
    let mut acc = vec![0.0; d_s];
    let mut count = 0usize;
    for ((a, b), e) in edge_embeddings {
        if *a != v && *b != v {
            continue;
        }
        if e.dim() != d_s {
            return Err(FusionError::Dimension {
                what: "edge embedding",
                expected: d_s,
                found: e.dim(),
            });
        }
        acc.iter_mut().zip(&e.values).for_each(|(s, x)| *s += x);
        count += 1;
    }
    if count > 0 {
        acc.iter_mut().for_each(|s| *s /= count as f64);
    }
    Ok(Embedding { values: acc })
}

/// [`pool_edge_intent`] for every node in one pass.
pub fn pool_all(
    n: usize,
    edge_embeddings: &[(Edge, Embedding)],
    d_s: usize,
) -> Result<Vec<Embedding>, FusionError> {
    let mut acc = vec![vec![0.0; d_s]; n];
    let mut count = vec![0usize; n];
    for ((a, b), e) in edge_embeddings {
        if e.dim() != d_s {
            return Err(FusionError::Dimension {
                what: "edge embedding",
                expected: d_s,
                found: e.dim(),
            });
        }
        for &v in &[*a, *b] {
            acc[v].iter_mut().zip(&e.values).for_each(|(s, x)| *s += x);
            count[v] += 1;
        }
    }
    Ok(acc
        .into_iter()
        .zip(count)
        .map(|(mut values, c)| {
            if c > 0 {
                values.iter_mut().for_each(|s| *s /= c as f64);
            }
            Embedding { values }
        })
        .collect())
}

/// Row-major `[x_v | h_node | h_edge]` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedFeatures {
    pub n: usize,
    pub d: usize,
    pub d_s: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    d: usize,
    d_s: usize,
}

impl FusedFeatures {
    pub fn width(&self) -> usize {
        self.d + 2 * self.d_s
    }

    pub fn row(&self, v: usize) -> &[f64] {
        let w = self.width();
        &self.values[v * w..(v + 1) * w]
    }

    pub fn x_block(&self, v: usize) -> &[f64] {
        &self.row(v)[..self.d]
    }

    pub fn node_block(&self, v: usize) -> &[f64] {
        &self.row(v)[self.d..self.d + self.d_s]
    }

    pub fn edge_block(&self, v: usize) -> &[f64] {
        &self.row(v)[self.d + self.d_s..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.n, self.width()), self.values.clone())
            .expect("consistent shape")
    }

    /// `u64` little-endian header length, JSON header `{n, d, d_s}`, then
    /// the matrix as row-major little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            n: self.n,
            d: self.d,
            d_s: self.d_s,
        })
        .expect("header");
        let mut out = Vec::with_capacity(8 + header.len() + 8 * self.values.len());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for x in &self.values {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FusionError> {
        let mut r = bytes;
        let mut len = [0u8; 8];
        r.read_exact(&mut len)
            .map_err(|_| FusionError::Format("truncated header length".into()))?;
        let len = u64::from_le_bytes(len) as usize;
        if r.len() < len {
            return Err(FusionError::Format("truncated header".into()));
        }
        let h: Header =
            serde_json::from_slice(&r[..len]).map_err(|e| FusionError::Format(e.to_string()))?;
        let body = &r[len..];
        let expected = h.n * (h.d + 2 * h.d_s) * 8;
        if body.len() != expected {
            return Err(FusionError::Format(format!(
                "expected {expected} matrix bytes, found {}",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            n: h.n,
            d: h.d,
            d_s: h.d_s,
            values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), FusionError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FusionError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Concatenates statistical features with the node and edge intent blocks.
pub fn fuse(
    x: &NodeFeatures,
    h_node: &[Embedding],
    h_edge: &[Embedding],
) -> Result<FusedFeatures, FusionError> {
    let n = x.rows();
    for (what, block) in [("node embeddings", h_node), ("edge embeddings", h_edge)] {
        if block.len() != n {
            return Err(FusionError::Dimension {
                what,
                expected: n,
                found: block.len(),
            });
        }
    }
    let d_s = h_node.first().map_or(0, Embedding::dim);
    let mut values = Vec::with_capacity(n * (x.dim() + 2 * d_s));
    for v in 0..n {
        for (what, e) in [
            ("node embedding", &h_node[v]),
            ("edge embedding", &h_edge[v]),
        ] {
            if e.dim() != d_s {
                return Err(FusionError::Dimension {
                    what,
                    expected: d_s,
                    found: e.dim(),
                });
            }
        }
        values.extend_from_slice(x.row(v));
        values.extend_from_slice(&h_node[v].values);
        values.extend_from_slice(&h_edge[v].values);
    }
    Ok(FusedFeatures {
        n,
        d: x.dim(),
        d_s,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_example() {
        let p = partition_nodes(&[0.9, 0.5, 0.1, 0.8, 0.2], 0.8, 0.2).unwrap();
        assert_eq!(p.suspected_fraud, vec![0]);
        assert_eq!(p.suspected_benign, vec![2]);
        assert!(partition_nodes(&[0.5; 4], 0.8, 0.2)
            .unwrap()
            .suspected_fraud
            .is_empty());
        assert!(matches!(
            partition_nodes(&[], 0.2, 0.2),
            Err(FusionError::Thresholds { .. })
        ));
    }

    #[test]
    fn selection_orders_by_gap_then_ids() {
        let z = [0.9, 0.1, 0.95, 0.05, 0.1, 0.5];
        let p = partition_nodes(&z, 0.8, 0.2).unwrap();
        let edges = [(0, 1), (2, 3), (0, 4), (1, 2), (0, 5), (2, 0)];
        let s = select_suspicious(&edges, &p, &z, 10);
        let got: Vec<Edge> = s.edges.iter().map(|e| e.edge).collect();
        assert_eq!(got, vec![(2, 3), (1, 2), (0, 1), (0, 4)]);
        assert!(select_suspicious(&edges, &p, &z, 0).is_empty());
        assert_eq!(select_suspicious(&edges, &p, &z, 2).len(), 2);
    }

    #[test]
    fn pooling() {
        let e = |v: Vec<f64>| Embedding { values: v };
        let embs = vec![((0, 1), e(vec![1.0, 0.0])), ((1, 2), e(vec![0.0, 3.0]))];
        assert_eq!(
            pool_edge_intent(1, &embs, 2).unwrap().values,
            vec![0.5, 1.5]
        );
        assert_eq!(
            pool_edge_intent(0, &embs, 2).unwrap().values,
            vec![1.0, 0.0]
        );
        assert!(pool_edge_intent(3, &embs, 2).unwrap().is_zero());
        let all = pool_all(4, &embs, 2).unwrap();
        for (v, pooled) in all.iter().enumerate() {
            assert_eq!(*pooled, pool_edge_intent(v, &embs, 2).unwrap());
        }
    }

    #[test]
    fn fuse_layout_and_file_round_trip() {
        let x = NodeFeatures::from_rows(vec![vec![1.0; 25], vec![2.0; 25]]).unwrap();
        let node = vec![
            Embedding {
                values: vec![0.5; 8],
            },
            Embedding::zeros(8),
        ];
        let edge = vec![
            Embedding::zeros(8),
            Embedding {
                values: vec![-1.0; 8],
            },
        ];
        let h = fuse(&x, &node, &edge).unwrap();
        assert_eq!(h.width(), 41);
        assert_eq!(h.x_block(1), x.row(1));
        assert_eq!(h.node_block(0), &node[0].values[..]);
        assert_eq!(h.edge_block(1), &edge[1].values[..]);
        assert_eq!(FusedFeatures::from_bytes(&h.to_bytes()).unwrap(), h);
        assert!(FusedFeatures::from_bytes(&h.to_bytes()[..40]).is_err());
    }

    #[test]
    fn fuse_rejects_mismatch() {
        let x = NodeFeatures::from_rows(vec![vec![1.0; 3]]).unwrap();
        let err = fuse(&x, &[Embedding::zeros(4)], &[Embedding::zeros(5)]).unwrap_err();
        assert!(matches!(
            err,
            FusionError::Dimension {
                expected: 4,
                found: 5,
                ..
            }
        ));
    }
}
