//! Intent-aware fraud detection on multi-relation review graphs.
//!
//! The pipeline profiles each node's behavior with a completion model,
//! scores nodes with an out-of-fold GNN ensemble, audits contradictory edges,
//! fuses the resulting text embeddings with statistical features and trains a
//! final detector with pseudo-label self-training.

pub mod eval;
pub mod fusion;
pub mod gnn;
pub mod graph;
pub mod intent;
pub mod pipeline;
pub mod retrieval;
pub mod selftrain;
