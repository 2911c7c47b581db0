//! End-to-end orchestration: profile every node, score with an out-of-fold
//! ensemble, audit contradictory edges, fuse and self-train.
//!
//! Every stage can checkpoint into a work directory and resumes from an
//! existing checkpoint. Completions are additionally cached by prompt hash,
//! so a fresh work directory with a warm cache makes no backend calls.

use crate::eval::synth::{generate_synthetic, Split, SynthConfig, SynthError, SynthOutput};
use crate::eval::{MetricError, MetricReport};
use crate::fusion::{
    cross_audit, encode_reports, fuse, partition_nodes, pool_all, select_suspicious, FusedFeatures,
    FusionError, SuspiciousEdgeSet, DEFAULT_BUDGET, DEFAULT_TAU_HIGH, DEFAULT_TAU_LOW,
};
use crate::gnn::oof::DEFAULT_FOLDS;
use crate::gnn::{
    forward_propagated, kfold_oof_scores, GnnError, GnnModel, NormAdj, Propagated, RiskScores,
    TrainConfig,
};
use crate::graph::GraphBundle;
use crate::graph::{LabelStore, RelationSel};
use crate::intent::{
    build_profile_prompt, AuditReport, ContextBuilder, Embedding, HashingEncoder, LlmClient,
    LlmError, MockBackend, ProfileInput, Prompt, PromptContext, TextEncoder, DEFAULT_EMBED_DIM,
};
use crate::intent::{CompletionCache, CountingBackend};
use crate::retrieval::{RetrievalError, RetrievalIndex, DEFAULT_ALPHA, DEFAULT_TEXT_DIM};
use crate::selftrain::{run_self_training, Holdout, RoundLog, SelfTrainConfig, SelfTrainError};
use ndarray::Array2;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage `{stage}` needs {path}, which does not exist; run the `{needs}` stage first")]
    MissingStage {
        stage: &'static str,
        needs: &'static str,
        path: PathBuf,
    },
    #[error("profiling failed: {0}")]
    Profile(LlmError),
    #[error("encoding failed: {0}")]
    Encode(LlmError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    SelfTrain(#[from] SelfTrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub exemplars_k: usize,
    pub alpha: f64,
    pub text_dim: usize,
    pub embed_dim: usize,
    pub folds: usize,
    pub tau_h: f64,
    pub tau_l: f64,
    pub budget: usize,
    /// Training settings for the preliminary out-of-fold models.
    pub train: TrainConfig,
    pub selftrain: SelfTrainConfig,
    pub strict_parse: bool,
    pub prompt: PromptContext,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            exemplars_k: 2,
            alpha: DEFAULT_ALPHA,
            text_dim: DEFAULT_TEXT_DIM,
            embed_dim: DEFAULT_EMBED_DIM,
            folds: DEFAULT_FOLDS,
            tau_h: DEFAULT_TAU_HIGH,
            tau_l: DEFAULT_TAU_LOW,
            budget: DEFAULT_BUDGET,
            train: TrainConfig::default(),
            selftrain: SelfTrainConfig::default(),
            strict_parse: false,
            prompt: PromptContext::default(),
        }
    }
}

/// Nodes kept away from pseudo-labeling, optionally with labels for
/// per-round held-out metrics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSplit {
    pub exclude: BTreeSet<usize>,
    pub holdout: Vec<(usize, u8)>,
}

/// Checkpoint file names inside a work directory.
pub mod files {
    pub const PROFILES: &str = "profiles.json";
    pub const SCORES: &str = "z.json";
    pub const SUSPICIOUS: &str = "suspicious.json";
    pub const AUDITS: &str = "audits.json";
    pub const FUSED: &str = "H.bin";
    pub const MODEL: &str = "model.bin";
    pub const ROUNDS: &str = "rounds.json";
    pub const FINAL: &str = "final_scores.json";
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Checkpoint {
        path: path.into(),
        msg: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    fs::write(path, serde_json::to_string(value).expect("serializable"))?;
    Ok(())
}

/// Loads `name` from the work directory if present, else computes and
/// stores it.
fn checkpoint<T, F>(dir: Option<&Path>, name: &str, compute: F) -> Result<T, PipelineError>
where
    T: Serialize + DeserializeOwned,
    F: FnOnce() -> Result<T, PipelineError>,
{
    let path = dir.map(|d| d.join(name));
    if let Some(p) = path.as_deref().filter(|p| p.exists()) {
        log::info!("resuming from {}", p.display());
        return read_json(p);
    }
    let value = compute()?;
    if let Some(p) = path {
        write_json(&p, &value)?;
    }
    Ok(value)
}

/// Fails with a stage-dependency error when `path` is missing.
pub fn require(path: &Path, stage: &'static str, needs: &'static str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingStage {
            stage,
            needs,
            path: path.into(),
        })
    }
}

/// Normalized adjacency of the homogeneous projection.
pub fn adjacency(bundle: &GraphBundle) -> Result<NormAdj, GnnError> {
    NormAdj::from_edges(
        bundle.graph.node_count(),
        &bundle.graph.homogeneous_projection(),
    )
}

/// Renders the profiling prompt of every node.
pub fn profile_prompts(
    bundle: &GraphBundle,
    labels: &LabelStore,
    cfg: &PipelineConfig,
) -> Result<Vec<Prompt>, PipelineError> {
    let index = RetrievalIndex::build(&bundle.traces, cfg.alpha, cfg.text_dim)?;
    let ctx = ContextBuilder::new(bundle);
    (0..bundle.graph.node_count())
        .into_par_iter()
        .map(|v| {
            let ex = index.retrieve(v, labels, cfg.exemplars_k)?;
            let input = ProfileInput::gather(bundle, &ctx, labels, v, &ex);
            Ok(build_profile_prompt(&input, &cfg.prompt))
        })
        .collect()
}

/// Profiles every node; any failed completion aborts the stage.
pub fn profile_stage(
    bundle: &GraphBundle,
    client: &LlmClient,
    cfg: &PipelineConfig,
) -> Result<Vec<String>, PipelineError> {
    let prompts = profile_prompts(bundle, &bundle.labels, cfg)?;
    client
        .complete_all(&prompts)
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(PipelineError::Profile)
}

pub fn encode_texts(
    texts: &[String],
    enc: &dyn TextEncoder,
) -> Result<Vec<Embedding>, PipelineError> {
    texts
        .par_iter()
        .map(|t| enc.encode(t))
        .collect::<Result<_, _>>()
        .map_err(PipelineError::Encode)
}

/// Row-wise concatenation of `x` with the given embedding blocks.
pub fn concat_features(x: &crate::graph::NodeFeatures, blocks: &[&[Embedding]]) -> Array2<f64> {
    let width = x.dim()
        + blocks
            .iter()
            .map(|b| b.first().map_or(0, Embedding::dim))
            .sum::<usize>();
    Array2::from_shape_fn((x.rows(), width), |(v, j)| {
        if j < x.dim() {
            return x.row(v)[j];
        }
        let mut j = j - x.dim();
        for b in blocks {
            let d = b[v].dim();
            if j < d {
                return b[v].values[j];
            }
            j -= d;
        }
        unreachable!("column within width")
    })
}

/// Preliminary out-of-fold risk scores over the given features.
pub fn score_stage(
    adj: NormAdj,
    features: &Array2<f64>,
    labels: &LabelStore,
    cfg: &PipelineConfig,
) -> Result<RiskScores, PipelineError> {
    let g = Propagated::new(adj, features.view())?;
    let labeled: Vec<_> = labels.labeled().collect();
    Ok(kfold_oof_scores(&g, &labeled, cfg.folds, &cfg.train)?.0)
}

/// Partition, select and audit contradictory edges.
pub fn audit_stage(
    bundle: &GraphBundle,
    z: &RiskScores,
    client: &LlmClient,
    cfg: &PipelineConfig,
) -> Result<(SuspiciousEdgeSet, Vec<AuditReport>), PipelineError> {
    let p = partition_nodes(&z.z, cfg.tau_h, cfg.tau_l)?;
    let es = select_suspicious(
        &bundle.graph.edges(&RelationSel::All).expect("projection"),
        &p,
        &z.z,
        cfg.budget,
    );
    log::info!(
        "{} suspected fraud, {} suspected benign, {} suspicious edges",
        p.suspected_fraud.len(),
        p.suspected_benign.len(),
        es.len()
    );
    let reports = cross_audit(&es, bundle, &z.z, client, &cfg.prompt, cfg.strict_parse)?;
    Ok((es, reports))
}

/// Encodes node profiles and pooled edge audits and fuses them with `x`.
pub fn fuse_stage(
    bundle: &GraphBundle,
    profiles: &[String],
    reports: &[AuditReport],
    enc: &dyn TextEncoder,
) -> Result<FusedFeatures, PipelineError> {
    let h_node = encode_texts(profiles, enc)?;
    let edge_embs = encode_reports(reports, enc)?;
    let h_edge = pool_all(bundle.graph.node_count(), &edge_embs, enc.dim())?;
    Ok(fuse(&bundle.features, &h_node, &h_edge)?)
}

fn holdout_parts(split: &EvalSplit) -> (Vec<usize>, Vec<u8>) {
    split.holdout.iter().copied().unzip()
}

/// Self-trains on `features` and returns the final model, its log and the
/// final model's scores for every node.
pub fn train_stage(
    adj: NormAdj,
    features: &Array2<f64>,
    labels: &LabelStore,
    cfg: &PipelineConfig,
    split: &EvalSplit,
) -> Result<(GnnModel, RoundLog, Vec<f64>), PipelineError> {
    let g = Propagated::new(adj, features.view())?;
    let (nodes, ys) = holdout_parts(split);
    let holdout = (!nodes.is_empty()).then_some(Holdout {
        nodes: &nodes,
        labels: &ys,
    });
    let out = run_self_training(&g, labels, &cfg.selftrain, &split.exclude, holdout)?;
    let scores = forward_propagated(&out.model, &g)?.to_vec();
    Ok((out.model, out.log, scores))
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub profiles: Vec<String>,
    pub z: RiskScores,
    pub suspicious: SuspiciousEdgeSet,
    pub reports: Vec<AuditReport>,
    pub fused: FusedFeatures,
    pub model: GnnModel,
    pub log: RoundLog,
    pub scores: Vec<f64>,
}

/// Runs every stage. With `workdir`, each stage's artifact is written there
/// and reused on the next invocation.
pub fn run_pipeline(
    bundle: &GraphBundle,
    client: &LlmClient,
    enc: &dyn TextEncoder,
    cfg: &PipelineConfig,
    split: &EvalSplit,
    workdir: Option<&Path>,
) -> Result<PipelineOutput, PipelineError> {
    if let Some(d) = workdir {
        fs::create_dir_all(d)?;
    }
    let adj = adjacency(bundle)?;

    let t = Instant::now();
    let profiles: Vec<String> = checkpoint(workdir, files::PROFILES, || {
        profile_stage(bundle, client, cfg)
    })?;
    log::info!("profiles ready in {:.1?}", t.elapsed());

    let z: RiskScores = checkpoint(workdir, files::SCORES, || {
        let h_node = encode_texts(&profiles, enc)?;
        score_stage(
            adj.clone(),
            &concat_features(&bundle.features, &[&h_node]),
            &bundle.labels,
            cfg,
        )
    })?;
    log::info!("preliminary scores ready in {:.1?}", t.elapsed());

    let (suspicious, reports): (SuspiciousEdgeSet, Vec<AuditReport>) = match workdir {
        Some(d) if d.join(files::SUSPICIOUS).exists() && d.join(files::AUDITS).exists() => (
            read_json(&d.join(files::SUSPICIOUS))?,
            read_json(&d.join(files::AUDITS))?,
        ),
        _ => {
            let (es, reports) = audit_stage(bundle, &z, client, cfg)?;
            if let Some(d) = workdir {
                write_json(&d.join(files::SUSPICIOUS), &es)?;
                write_json(&d.join(files::AUDITS), &reports)?;
            }
            (es, reports)
        }
    };
    log::info!("audits ready in {:.1?}", t.elapsed());

    let fused = match workdir.map(|d| d.join(files::FUSED)).filter(|p| p.exists()) {
        Some(p) => FusedFeatures::load(&p)?,
        None => {
            let h = fuse_stage(bundle, &profiles, &reports, enc)?;
            if let Some(d) = workdir {
                h.save(&d.join(files::FUSED))?;
            }
            h
        }
    };

    let (model, log, scores) = train_stage(adj, &fused.to_array(), &bundle.labels, cfg, split)?;
    if let Some(d) = workdir {
        fs::write(d.join(files::MODEL), model.to_bytes())?;
        write_json(&d.join(files::ROUNDS), &log)?;
        write_json(&d.join(files::FINAL), &scores)?;
    }
    log::info!("pipeline finished in {:.1?}", t.elapsed());
    Ok(PipelineOutput {
        profiles,
        z,
        suspicious,
        reports,
        fused,
        model,
        log,
        scores,
    })
}

/// The statistical-features-only reference: same GNN, same self-training.
pub fn run_baseline(
    bundle: &GraphBundle,
    cfg: &PipelineConfig,
    split: &EvalSplit,
) -> Result<(GnnModel, RoundLog, Vec<f64>), PipelineError> {
    let x = concat_features(&bundle.features, &[]);
    train_stage(adjacency(bundle)?, &x, &bundle.labels, cfg, split)
}

/// Held-out metrics for one generated graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSeed {
    pub seed: u64,
    pub pipeline: MetricReport,
    pub baseline: MetricReport,
    pub suspicious_edges: usize,
    pub backend_calls: usize,
    pub seconds: f64,
}

/// Generates a synthetic graph, runs the full pipeline with the mock
/// backend and the features-only baseline, and scores both on the test
/// split. Test and unlabeled-pool labels never reach training.
pub fn bench_seed(
    synth: &SynthConfig,
    cfg: &PipelineConfig,
    cache: Option<&Path>,
) -> Result<BenchSeed, PipelineError> {
    let t = Instant::now();
    let SynthOutput { bundle, truth, .. } = generate_synthetic(synth)?;
    let test = truth.nodes_in(Split::Test);
    let split = EvalSplit {
        exclude: test.iter().copied().collect(),
        holdout: test.iter().map(|&v| (v, truth.labels[v])).collect(),
    };
    let backend = Arc::new(CountingBackend::new(MockBackend::new()));
    let mut client = LlmClient::new(backend.clone());
    if let Some(c) = cache {
        client = client.with_cache(CompletionCache::new(c));
    }
    let enc = HashingEncoder::new(cfg.embed_dim);
    let out = run_pipeline(&bundle, &client, &enc, cfg, &split, None)?;
    let (_, _, base) = run_baseline(&bundle, cfg, &split)?;
    let ys: Vec<u8> = test.iter().map(|&v| truth.labels[v]).collect();
    let pick = |s: &[f64]| test.iter().map(|&v| s[v]).collect::<Vec<_>>();
    Ok(BenchSeed {
        seed: synth.seed,
        pipeline: MetricReport::compute(&pick(&out.scores), &ys, 0.5)?,
        baseline: MetricReport::compute(&pick(&base), &ys, 0.5)?,
        suspicious_edges: out.suspicious.len(),
        backend_calls: backend.calls(),
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// Median of a non-empty slice.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn missing_stage_names_dependency() {
        let err = require(Path::new("/nonexistent/z.json"), "audit", "score").unwrap_err();
        assert!(err.to_string().contains("run the `score` stage first"));
    }
}
