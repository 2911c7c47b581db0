use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use l2ir::eval::synth::{Split, Truth};
use l2ir::eval::{generate_synthetic, pr_curve, roc_curve, CurvePoint, MetricReport, SynthConfig};
use l2ir::fusion::{FusedFeatures, DEFAULT_BUDGET, DEFAULT_TAU_HIGH, DEFAULT_TAU_LOW};
use l2ir::gnn::{RiskScores, TrainConfig};
use l2ir::graph::{
    behavior_similarity, connection_similarity, load_graph, GraphBundle, RelationSel, StatError,
};
use l2ir::intent::{
    AuditReport, CacheOnlyBackend, CompletionCache, HashingEncoder, LlmBackend, LlmClient,
    MockBackend, RemoteBackend, RemoteEncoder, TextEncoder, DEFAULT_EMBED_DIM, MOCK_MODEL_ID,
};
use l2ir::pipeline::{
    adjacency, audit_stage, bench_seed, concat_features, encode_texts, fuse_stage, median,
    profile_stage, require, run_pipeline, score_stage, train_stage, EvalSplit, PipelineConfig,
};
use l2ir::retrieval::{RetrievalIndex, DEFAULT_ALPHA, DEFAULT_TEXT_DIM};
use l2ir::selftrain::{SelfTrainConfig, DEFAULT_TAU_BENIGN, DEFAULT_TAU_FRAUD};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "l2ir",
    version,
    about = "Intent-aware fraud detection on review graphs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate node/edge JSON lines and write a graph archive.
    Ingest {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print behavior and connection similarity per relation.
    Stats {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        relation: Option<String>,
        /// RBF bandwidth; defaults to 1/d.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Print the retrieved exemplars of one node as JSON.
    Exemplars {
        #[arg(long)]
        graph: PathBuf,
        /// Node id as written in the node file.
        #[arg(long)]
        node: String,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
    },
    /// Profile every node's behavior intent.
    Profile {
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        llm: LlmArgs,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value = "profiles.json")]
        out: PathBuf,
    },
    /// Out-of-fold preliminary risk scores.
    Score {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = FeatureStage::RawNode)]
        features: FeatureStage,
        /// Profiles from the `profile` stage (needed for raw+node).
        #[arg(long, default_value = "profiles.json")]
        profiles: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        enc: EncoderArgs,
        #[arg(long, default_value = "z.json")]
        out: PathBuf,
    },
    /// Audit contradictory edges selected from preliminary scores.
    Audit {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[command(flatten)]
        llm: LlmArgs,
        #[command(flatten)]
        sel: SelectArgs,
        #[arg(long, default_value = "audits.json")]
        out: PathBuf,
    },
    /// Fuse statistical features with profile and audit embeddings.
    Fuse {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// Profile JSON from the `profile` stage, or a completion cache directory.
        #[arg(long)]
        profiles: PathBuf,
        /// Audit JSON from the `audit` stage, or a completion cache directory.
        #[arg(long)]
        audits: PathBuf,
        /// Model id under which cached completions were stored.
        #[arg(long, default_value = MOCK_MODEL_ID)]
        model: String,
        #[command(flatten)]
        sel: SelectArgs,
        #[command(flatten)]
        enc: EncoderArgs,
        #[arg(long, default_value = "H.bin")]
        out: PathBuf,
    },
    /// Self-train the final detector on fused features.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        fused: PathBuf,
        #[command(flatten)]
        st: SelfTrainArgs,
        /// Split file whose test nodes are excluded from pseudo-labeling.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = "model.bin")]
        out: PathBuf,
        #[arg(long, default_value = "rounds.json")]
        log: PathBuf,
        #[arg(long, default_value = "final_scores.json")]
        scores_out: PathBuf,
    },
    /// Score predictions against labels and emit metrics plus curve points.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// A graph archive (its labels) or a truth.json file (its test split).
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Generate a synthetic camouflaged review graph.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage with checkpoints in a work directory.
    Run {
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        llm: LlmArgs,
        #[command(flatten)]
        enc: EncoderArgs,
        #[command(flatten)]
        sel: SelectArgs,
        #[command(flatten)]
        st: SelfTrainArgs,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value = "work")]
        work: PathBuf,
    },
    /// Compare the full pipeline with the features-only baseline on
    /// synthetic graphs, one line of JSON per seed.
    Bench {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FeatureStage {
    Raw,
    #[value(name = "raw+node")]
    RawNode,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Mock,
    Remote,
    /// Serve cached completions only.
    Cache,
}

#[derive(Args)]
struct LlmArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    backend: BackendKind,
    #[arg(long, default_value = "cache")]
    cache: PathBuf,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
}

#[derive(Args)]
struct EncoderArgs {
    /// Use the embedding endpoint from L2IR_EMB_URL / L2IR_EMB_MODEL.
    #[arg(long)]
    remote_encoder: bool,
    #[arg(long, default_value_t = DEFAULT_EMBED_DIM)]
    embed_dim: usize,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long, default_value_t = DEFAULT_TAU_HIGH)]
    tau_h: f64,
    #[arg(long, default_value_t = DEFAULT_TAU_LOW)]
    tau_l: f64,
    #[arg(long, default_value_t = DEFAULT_BUDGET)]
    budget: usize,
}

#[derive(Args)]
struct SelfTrainArgs {
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value_t = DEFAULT_TAU_FRAUD)]
    tau_fraud: f64,
    #[arg(long, default_value_t = DEFAULT_TAU_BENIGN)]
    tau_benign: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long = "nodes", default_value_t = 2000)]
    n_nodes: usize,
    #[arg(long, default_value_t = 0.07)]
    fraud_ratio: f64,
    #[arg(long, default_value_t = 0.90)]
    camouflage: f64,
    #[arg(long, default_value_t = 0.8)]
    trace_signal: f64,
    #[arg(long, default_value_t = 3)]
    relations: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl SynthArgs {
    fn config(&self) -> SynthConfig {
        SynthConfig {
            n_nodes: self.n_nodes,
            fraud_ratio: self.fraud_ratio,
            camouflage: self.camouflage,
            trace_signal: self.trace_signal,
            relations: self.relations,
            seed: self.seed,
            ..Default::default()
        }
    }
}

impl LlmArgs {
    fn client(&self) -> Result<LlmClient> {
        let backend: Arc<dyn LlmBackend> = match self.backend {
            BackendKind::Mock => Arc::new(MockBackend::new()),
            BackendKind::Remote => Arc::new(RemoteBackend::from_env()?),
            BackendKind::Cache => Arc::new(CacheOnlyBackend::new(
                std::env::var("L2IR_LLM_MODEL").unwrap_or_else(|_| MOCK_MODEL_ID.into()),
            )),
        };
        Ok(LlmClient::new(backend)
            .with_cache(CompletionCache::new(&self.cache))
            .with_max_in_flight(self.max_in_flight))
    }
}

impl EncoderArgs {
    fn encoder(&self) -> Result<Box<dyn TextEncoder>> {
        Ok(if self.remote_encoder {
            Box::new(RemoteEncoder::from_env(self.embed_dim)?)
        } else {
            Box::new(HashingEncoder::new(self.embed_dim))
        })
    }
}

fn config(sel: Option<&SelectArgs>, st: Option<&SelfTrainArgs>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(s) = sel {
        cfg.tau_h = s.tau_h;
        cfg.tau_l = s.tau_l;
        cfg.budget = s.budget;
    }
    if let Some(s) = st {
        let train = TrainConfig {
            seed: s.seed,
            epochs: s.epochs,
            batch: s.batch,
            ..Default::default()
        };
        cfg.train = train.clone();
        cfg.selftrain = SelfTrainConfig::new(s.tau_fraud, s.tau_benign, s.rounds, train)?;
    }
    Ok(cfg)
}

fn load_bundle(path: &Path) -> Result<GraphBundle> {
    GraphBundle::load(path).with_context(|| format!("loading graph archive {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Accepts `{"scores": [...], ...}` or a bare array.
fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let v: serde_json::Value = read_json(path)?;
    let arr = v.get("scores").cloned().unwrap_or(v);
    serde_json::from_value(arr).with_context(|| format!("no score array in {}", path.display()))
}

fn split_from_truth(path: Option<&PathBuf>) -> Result<EvalSplit> {
    let Some(p) = path else {
        return Ok(EvalSplit::default());
    };
    let truth = Truth::load(p).with_context(|| format!("reading {}", p.display()))?;
    let test = truth.nodes_in(Split::Test);
    Ok(EvalSplit {
        exclude: test.iter().copied().collect(),
        holdout: test.iter().map(|&v| (v, truth.labels[v])).collect(),
    })
}

fn cache_replay(dir: &Path, model: &str) -> LlmClient {
    LlmClient::new(Arc::new(CacheOnlyBackend::new(model))).with_cache(CompletionCache::new(dir))
}

#[derive(Serialize)]
struct EvalOutput {
    #[serde(flatten)]
    metrics: MetricReport,
    pr_curve: Vec<CurvePoint>,
    roc_curve: Vec<CurvePoint>,
}

#[derive(Serialize)]
struct StatRow {
    relation: String,
    behavior_similarity: Option<f64>,
    connection_similarity: Option<f64>,
}

fn optional(r: Result<f64, StatError>) -> Result<Option<f64>> {
    match r {
        Ok(x) => Ok(Some(x)),
        Err(StatError::Empty(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Ingest { nodes, edges, out } => {
            let bundle = load_graph(&nodes, &edges)?;
            bundle.save(&out)?;
            println!(
                "{} nodes, {} relations, {} projected edges, {} labeled",
                bundle.graph.node_count(),
                bundle.graph.relations().len(),
                bundle.graph.homogeneous_projection().len(),
                bundle.labels.len()
            );
        }
        Cmd::Stats {
            graph,
            relation,
            gamma,
        } => {
            let b = load_bundle(&graph)?;
            let sels: Vec<RelationSel> = match relation {
                Some(r) => vec![RelationSel::parse(&r)],
                None => b
                    .graph
                    .relations()
                    .iter()
                    .map(|r| RelationSel::Named(r.clone()))
                    .chain([RelationSel::All])
                    .collect(),
            };
            println!("{:<12} {:>10} {:>10}", "relation", "Behav.", "Conn.");
            for sel in sels {
                let behav = optional(behavior_similarity(
                    &b.graph,
                    &b.features,
                    &b.labels,
                    &sel,
                    gamma,
                ))?;
                let conn = optional(connection_similarity(&b.graph, &b.labels, &sel))?;
                let pct =
                    |x: Option<f64>| x.map_or("n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
                println!(
                    "{:<12} {:>10} {:>10}",
                    sel.to_string(),
                    pct(behav),
                    pct(conn)
                );
                log::debug!(
                    "{}",
                    serde_json::to_string(&StatRow {
                        relation: sel.to_string(),
                        behavior_similarity: behav,
                        connection_similarity: conn
                    })?
                );
            }
        }
        Cmd::Exemplars {
            graph,
            node,
            k,
            alpha,
        } => {
            let b = load_bundle(&graph)?;
            let Some(v) = b.ids.iter().position(|id| *id == node) else {
                bail!("unknown node id {node}");
            };
            let index = RetrievalIndex::build(&b.traces, alpha, DEFAULT_TEXT_DIM)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&index.retrieve(v, &b.labels, k)?)?
            );
        }
        Cmd::Profile {
            graph,
            llm,
            k,
            alpha,
            out,
        } => {
            let b = load_bundle(&graph)?;
            let cfg = PipelineConfig {
                exemplars_k: k,
                alpha,
                ..Default::default()
            };
            let profiles = profile_stage(&b, &llm.client()?, &cfg)?;
            write_json(&out, &profiles)?;
            println!("{} profiles written to {}", profiles.len(), out.display());
        }
        Cmd::Score {
            graph,
            features,
            profiles,
            k,
            seed,
            enc,
            out,
        } => {
            let b = load_bundle(&graph)?;
            let cfg = PipelineConfig {
                folds: k,
                train: TrainConfig {
                    seed,
                    ..Default::default()
                },
                ..Default::default()
            };
            let x = match features {
                FeatureStage::Raw => concat_features(&b.features, &[]),
                FeatureStage::RawNode => {
                    require(&profiles, "score", "profile")?;
                    let texts: Vec<String> = read_json(&profiles)?;
                    let h = encode_texts(&texts, enc.encoder()?.as_ref())?;
                    concat_features(&b.features, &[&h])
                }
            };
            let z = score_stage(adjacency(&b)?, &x, &b.labels, &cfg)?;
            z.save(&out)?;
            println!("scores for {} nodes written to {}", z.len(), out.display());
        }
        Cmd::Audit {
            graph,
            scores,
            llm,
            sel,
            out,
        } => {
            require(&scores, "audit", "score")?;
            let b = load_bundle(&graph)?;
            let z = RiskScores::load(&scores)?;
            let cfg = config(Some(&sel), None)?;
            let (es, reports) = audit_stage(&b, &z, &llm.client()?, &cfg)?;
            let degraded = reports.iter().filter(|r| r.degraded).count();
            write_json(&out, &reports)?;
            println!(
                "{} edges audited ({degraded} degraded), written to {}",
                es.len(),
                out.display()
            );
        }
        Cmd::Fuse {
            graph,
            scores,
            profiles,
            audits,
            model,
            sel,
            enc,
            out,
        } => {
            require(&scores, "fuse", "score")?;
            require(&profiles, "fuse", "profile")?;
            require(&audits, "fuse", "audit")?;
            let b = load_bundle(&graph)?;
            let cfg = config(Some(&sel), None)?;
            let texts: Vec<String> = if profiles.is_dir() {
                profile_stage(&b, &cache_replay(&profiles, &model), &cfg)?
            } else {
                read_json(&profiles)?
            };
            let reports: Vec<AuditReport> = if audits.is_dir() {
                let z = RiskScores::load(&scores)?;
                audit_stage(&b, &z, &cache_replay(&audits, &model), &cfg)?.1
            } else {
                read_json(&audits)?
            };
            let h = fuse_stage(&b, &texts, &reports, enc.encoder()?.as_ref())?;
            h.save(&out)?;
            println!(
                "{} x {} fused matrix written to {}",
                h.n,
                h.width(),
                out.display()
            );
        }
        Cmd::Train {
            graph,
            fused,
            st,
            truth,
            out,
            log,
            scores_out,
        } => {
            require(&fused, "train", "fuse")?;
            let b = load_bundle(&graph)?;
            let h = FusedFeatures::load(&fused)?;
            if h.n != b.graph.node_count() {
                bail!(
                    "fused matrix has {} rows but the graph has {} nodes",
                    h.n,
                    b.graph.node_count()
                );
            }
            let cfg = config(None, Some(&st))?;
            let split = split_from_truth(truth.as_ref())?;
            let (model, rounds, scores) =
                train_stage(adjacency(&b)?, &h.to_array(), &b.labels, &cfg, &split)?;
            fs::write(&out, model.to_bytes())?;
            write_json(&log, &rounds)?;
            write_json(&scores_out, &scores)?;
            for r in &rounds.rounds {
                println!(
                    "round {}: {} labels, +{} fraud / +{} benign pseudo-labels{}",
                    r.round,
                    r.n_labeled,
                    r.pseudo_fraud.len(),
                    r.pseudo_benign.len(),
                    r.holdout.as_ref().map_or(String::new(), |m| format!(
                        ", held-out AUPRC {:.4}",
                        m.auprc
                    ))
                );
            }
        }
        Cmd::Eval {
            scores,
            labels,
            threshold,
            out,
        } => {
            let s = read_scores(&scores)?;
            let pairs: Vec<(usize, u8)> = if labels.extension().is_some_and(|e| e == "json") {
                let truth = Truth::load(&labels)?;
                let test = truth.nodes_in(Split::Test);
                let nodes = if test.is_empty() {
                    (0..truth.labels.len()).collect()
                } else {
                    test
                };
                nodes.into_iter().map(|v| (v, truth.labels[v])).collect()
            } else {
                load_bundle(&labels)?.labels.labeled().collect()
            };
            if let Some(&(v, _)) = pairs.iter().find(|&&(v, _)| v >= s.len()) {
                bail!("labeled node {v} has no score ({} scores)", s.len());
            }
            let xs: Vec<f64> = pairs.iter().map(|&(v, _)| s[v]).collect();
            let ys: Vec<u8> = pairs.iter().map(|&(_, y)| y).collect();
            let report = EvalOutput {
                metrics: MetricReport::compute(&xs, &ys, threshold)?,
                pr_curve: pr_curve(&xs, &ys)?,
                roc_curve: roc_curve(&xs, &ys)?,
            };
            write_json(&out, &report)?;
            let m = &report.metrics;
            println!(
                "AUROC {:.4}  AUPRC {:.4}  MacroF1 {:.4}  ({} pos / {} neg)",
                m.auroc, m.auprc, m.macro_f1, m.n_pos, m.n_neg
            );
        }
        Cmd::Synth { synth, out } => {
            let g = generate_synthetic(&synth.config())?;
            g.write(&out)?;
            println!(
                "{} nodes written to {} (fraud-neighbor fraction {:.3})",
                g.truth.labels.len(),
                out.display(),
                g.connection_similarity
            );
        }
        Cmd::Run {
            graph,
            llm,
            enc,
            sel,
            st,
            truth,
            work,
        } => {
            let b = load_bundle(&graph)?;
            let cfg = config(Some(&sel), Some(&st))?;
            let split = split_from_truth(truth.as_ref())?;
            let out = run_pipeline(
                &b,
                &llm.client()?,
                enc.encoder()?.as_ref(),
                &cfg,
                &split,
                Some(&work),
            )?;
            println!(
                "{} profiles, {} suspicious edges, {} rounds; artifacts in {}",
                out.profiles.len(),
                out.suspicious.len(),
                out.log.rounds.len(),
                work.display()
            );
        }
        Cmd::Bench { synth, seeds } => {
            let cfg = PipelineConfig::default();
            let (mut p, mut base) = (Vec::new(), Vec::new());
            for seed in 0..seeds {
                let r = bench_seed(
                    &SynthConfig {
                        seed,
                        ..synth.config()
                    },
                    &cfg,
                    None,
                )?;
                println!("{}", serde_json::to_string(&r)?);
                p.push(r.pipeline.auprc);
                base.push(r.baseline.auprc);
            }
            println!(
                "median AUPRC: pipeline {:.4}, baseline {:.4}, gain {:+.2} points",
                median(&p),
                median(&base),
                100.0 * (median(&p) - median(&base))
            );
        }
    }
    Ok(())
}
