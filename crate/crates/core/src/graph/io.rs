use super::{BehaviorTrace, GraphError, HeteroGraph, LabelStore, NodeFeatures, TraceRecord};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed record: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{file}:{line}: unknown node id `{id}`")]
    UnknownNode {
        file: String,
        line: usize,
        id: String,
    },
    #[error("{file}:{line}: self-loop on `{id}`")]
    SelfLoop {
        file: String,
        line: usize,
        id: String,
    },
    #[error("{file}:{line}: duplicate node id `{id}`")]
    DuplicateNode {
        file: String,
        line: usize,
        id: String,
    },
    #[error("{file}:{line}: feature dimension {found}, expected {expected}")]
    FeatureDim {
        file: String,
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph archive: {0}")]
    Archive(String),
}

/// One line of `nodes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default)]
    pub traces: Vec<TraceRecordJson>,
}

/// Wire form of a trace record inside `nodes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecordJson {
    pub item: String,
    pub ts: i64,
    pub rating: u8,
    pub text: String,
    pub help: f64,
}

/// One line of `edges.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: String,
    pub dst: String,
    pub relation: String,
}

/// Everything ingested from a node/edge file pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBundle {
    pub graph: HeteroGraph,
    pub features: NodeFeatures,
    pub traces: Vec<BehaviorTrace>,
    pub labels: LabelStore,
    /// Original string id of each dense node id.
    pub ids: Vec<String>,
}

impl GraphBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>, IngestError> {
        bincode::serialize(self).map_err(|e| IngestError::Archive(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IngestError> {
        bincode::deserialize(bytes).map_err(|e| IngestError::Archive(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|source| io_err(path, source))
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let bytes = fs::read(path).map_err(|source| io_err(path, source))?;
        Self::from_bytes(&bytes)
    }

    /// Writes the bundle back out as `nodes.jsonl` / `edges.jsonl`.
    pub fn write_jsonl(&self, nodes_path: &Path, edges_path: &Path) -> Result<(), IngestError> {
        let mut nodes = Vec::new();
        for v in 0..self.graph.node_count() {
            let rec = NodeRecord {
                id: self.ids[v].clone(),
                features: self.features.row(v).to_vec(),
                label: self.labels.label(v),
                traces: self.traces[v]
                    .records()
                    .iter()
                    .map(|r| TraceRecordJson {
                        item: r.item_id.clone(),
                        ts: r.timestamp,
                        rating: r.rating,
                        text: r.text.clone(),
                        help: r.helpfulness,
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut nodes, &rec).expect("serializable");
            nodes.push(b'\n');
        }
        let mut edges = Vec::new();
        for rel in self.graph.relations() {
            for &(u, v) in self.graph.relation_edges(rel)? {
                let rec = EdgeRecord {
                    src: self.ids[u].clone(),
                    dst: self.ids[v].clone(),
                    relation: rel.clone(),
                };
                serde_json::to_writer(&mut edges, &rec).expect("serializable");
                edges.push(b'\n');
            }
        }
        write_file(nodes_path, &nodes)?;
        write_file(edges_path, &edges)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(bytes).map_err(|e| io_err(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, IngestError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

/// Reads and validates `nodes.jsonl` + `edges.jsonl`.
pub fn load_graph(nodes_path: &Path, edges_path: &Path) -> Result<GraphBundle, IngestError> {
    let nodes = read_lines(nodes_path)?;
    let edges = read_lines(edges_path)?;
    parse_graph(
        &nodes_path.display().to_string(),
        &nodes,
        &edges_path.display().to_string(),
        &edges,
    )
}

/// Parses pre-split JSON lines; `(line_number, text)` pairs keep error
/// positions meaningful.
pub fn parse_graph(
    nodes_name: &str,
    nodes: &[(usize, String)],
    edges_name: &str,
    edges: &[(usize, String)],
) -> Result<GraphBundle, IngestError> {
    let malformed = |file: &str, line: usize, msg: String| IngestError::Malformed {
        file: file.to_string(),
        line,
        msg,
    };

    let mut ids = Vec::with_capacity(nodes.len());
    let mut index: HashMap<String, usize> = HashMap::with_capacity(nodes.len());
    let mut rows = Vec::with_capacity(nodes.len());
    let mut traces = Vec::with_capacity(nodes.len());
    let mut labels = Vec::new();
    let mut dim = None;

    for (line, text) in nodes {
        let rec: NodeRecord =
            serde_json::from_str(text).map_err(|e| malformed(nodes_name, *line, e.to_string()))?;
        let expected = *dim.get_or_insert(rec.features.len());
        if rec.features.len() != expected {
            return Err(IngestError::FeatureDim {
                file: nodes_name.to_string(),
                line: *line,
                found: rec.features.len(),
                expected,
            });
        }
        if rec.features.iter().any(|x| !x.is_finite()) {
            return Err(malformed(nodes_name, *line, "non-finite feature".into()));
        }
        let v = ids.len();
        if index.insert(rec.id.clone(), v).is_some() {
            return Err(IngestError::DuplicateNode {
                file: nodes_name.to_string(),
                line: *line,
                id: rec.id,
            });
        }
        if let Some(y) = rec.label {
            if y > 1 {
                return Err(malformed(
                    nodes_name,
                    *line,
                    format!("label {y} is not 0 or 1"),
                ));
            }
            labels.push((v, y));
        }
        let records = rec
            .traces
            .into_iter()
            .map(|t| TraceRecord {
                item_id: t.item,
                timestamp: t.ts,
                rating: t.rating,
                text: t.text,
                helpfulness: t.help,
            })
            .collect();
        let trace =
            BehaviorTrace::new(records).map_err(|e| malformed(nodes_name, *line, e.to_string()))?;
        ids.push(rec.id);
        rows.push(rec.features);
        traces.push(trace);
    }

    // Relations keep first-appearance order.
    let mut relations: Vec<(String, Vec<(usize, usize)>)> = Vec::new();
    let mut rel_index: BTreeMap<String, usize> = BTreeMap::new();
    for (line, text) in edges {
        let rec: EdgeRecord =
            serde_json::from_str(text).map_err(|e| malformed(edges_name, *line, e.to_string()))?;
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| IngestError::UnknownNode {
                    file: edges_name.to_string(),
                    line: *line,
                    id: id.to_string(),
                })
        };
        let u = lookup(&rec.src)?;
        let v = lookup(&rec.dst)?;
        if u == v {
            return Err(IngestError::SelfLoop {
                file: edges_name.to_string(),
                line: *line,
                id: rec.src,
            });
        }
        let slot = *rel_index.entry(rec.relation.clone()).or_insert_with(|| {
            relations.push((rec.relation.clone(), Vec::new()));
            relations.len() - 1
        });
        relations[slot].1.push((u, v));
    }

    let n = ids.len();
    let graph = HeteroGraph::new(n, relations)?;
    let features = if n == 0 {
        NodeFeatures::from_rows(Vec::new())?
    } else {
        NodeFeatures::from_rows(rows)?
    };
    let labels = LabelStore::from_ground_truth(n, labels)
        .map_err(|e| malformed(nodes_name, 0, e.to_string()))?;
    Ok(GraphBundle {
        graph,
        features,
        traces,
        labels,
        ids,
    })
}
