//! Prompt rendering for behavior profiling and connection auditing.
//!
//! Rendering is a pure function of its inputs: numbers use fixed precision,
//! maps are ordered and dates are UTC, so the same inputs give byte-identical
//! prompts on every platform.

use crate::graph::{
    neighbor_lists, BehaviorTrace, GraphBundle, LabelStore, RelationSel, TraceRecord,
};
use crate::intent::encoder::tokenize;
use crate::retrieval::ExemplarSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Profile,
    Audit,
}

impl PromptKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            PromptKind::Profile => "profiles",
            PromptKind::Audit => "audits",
        }
    }

    /// Section markers every prompt of this kind must carry, in order.
    pub fn sections(self) -> &'static [&'static str] {
        match self {
            PromptKind::Profile => &["[Role]", "[Exemplars]", "[Target Node]", "[Output]"],
            PromptKind::Audit => &["[Role]", "[Target Connection]", "[Output]"],
        }
    }

    /// Section headings the model output must follow, in order.
    pub fn output_sections(self) -> &'static [&'static str] {
        match self {
            PromptKind::Profile => &PROFILE_OUTPUT_SECTIONS,
            PromptKind::Audit => &AUDIT_OUTPUT_SECTIONS,
        }
    }
}

pub const PROFILE_OUTPUT_SECTIONS: [&str; 4] = [
    "User Profile Summary",
    "Behavior Pattern Analysis",
    "Fraud Signal Analysis",
    "Overall Assessment",
];

pub const AUDIT_OUTPUT_SECTIONS: [&str; 5] = [
    "Connection Overview",
    "Behavior Difference",
    "Connection Intent Analysis",
    "Counter Evidence and Uncertainty",
    "Risk Verdict",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub kind: PromptKind,
    pub system: String,
    pub user: String,
}

impl Prompt {
    /// Content address: `sha256(model_id \0 system \0 user)` as lowercase hex.
    pub fn cache_key(&self, model_id: &str) -> String {
        let mut h = Sha256::new();
        h.update(model_id.as_bytes());
        h.update([0u8]);
        h.update(self.system.as_bytes());
        h.update([0u8]);
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())
    }

    /// True when every section marker for this kind appears, in order.
    pub fn has_required_sections(&self) -> bool {
        let full = format!("{}\n{}", self.system, self.user);
        in_order(&full, self.kind.sections())
    }
}

/// True when each needle occurs after the previous one.
pub fn in_order(text: &str, needles: &[&str]) -> bool {
    let mut pos = 0;
    for n in needles {
        match text[pos..].find(n) {
            Some(i) => pos += i + n.len(),
            None => return false,
        }
    }
    true
}

/// Dataset framing sentence shared by both templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub dataset: String,
}

impl Default for PromptContext {
    fn default() -> Self {
        Self {
            dataset: "The Amazon dataset contains e-commerce product reviews".into(),
        }
    }
}

const PROFILE_SYSTEM: &str = "You are a senior fraud detection analyst specializing in review behavior and relation camouflage. Your task is to infer behavior intent. Strictly follow all provided constraints and requirements.";

const PROFILE_TASK: &str = "Task:
Analyze the target user's behavior intent. Focus on activity pattern, rating behavior, review content, helpfulness, graph context, and possible fraud signals.

Requirements:
1) **Information source**: Use only the provided information.
2) **Reference use**: Use reference cases only for comparison. Do not treat them as target labels.
3) **Context use**: Use graph relation context as supporting information. Do not infer the target label from neighbor labels alone.
4) **Balanced signals**: Consider both fraud signals and benign signals.
5) **Intent grounding**: Separate observed behavior from inferred behavior intent.
6) **Output format**: Return only four sections: User Profile Summary, Behavior Pattern Analysis, Fraud Signal Analysis, and Overall Assessment. Do not output the final class label. The output should read naturally and contain no phrasing that suggests it was produced by a language model.";

const AUDIT_SYSTEM: &str = "You are a senior fraud audit analyst specializing in review graphs and relation camouflage. Your task is to analyze the intent behind a suspicious connection between a suspected fraudster and a likely benign user, and assess whether this connection provides supportive or misleading evidence for fraud detection. Strictly follow all provided constraints and requirements.";

const AUDIT_TASK: &str = "Task:
Analyze the connection between User A and User B. Focus on behavior difference, shared products, rating pattern, review timing, review content, helpfulness, and connection intent. Use only connection related information and do not repeat full user profiles.

Requirements:
1) **Information source**: Use only the provided information.
2) **Role use**: Use preliminary roles and scores only as audit signals. Do not treat them as ground truth labels.
3) **Balanced judgment**: Consider both supportive and misleading interpretations.
4) **Intent grounding**: Separate observed behavior from inferred connection intent.
5) **Verdict format**: In Risk Verdict, return the risk level as Low, Medium, or High, confidence as a number between 0 and 1, and exactly three key signals.
6) **Output format**: Return only five sections: Connection Overview, Behavior Difference, Connection Intent Analysis, Counter Evidence and Uncertainty, and Risk Verdict. The output should read naturally and contain no phrasing that suggests it was produced by a language model.";

const POSITIVE_WORDS: &[&str] = &[
    "amazing",
    "awesome",
    "best",
    "excellent",
    "fantastic",
    "good",
    "great",
    "happy",
    "love",
    "nice",
    "perfect",
    "recommend",
    "wonderful",
];
const NEGATIVE_WORDS: &[&str] = &[
    "awful",
    "bad",
    "broken",
    "cheap",
    "disappointed",
    "hate",
    "poor",
    "problem",
    "refund",
    "return",
    "terrible",
    "useless",
    "waste",
    "worst",
];

/// Lexicon sentiment in `[-1, 1]`: `(pos - neg) / (pos + neg)`, 0 without hits.
pub fn sentiment(text: &str) -> f64 {
    let (mut pos, mut neg) = (0usize, 0usize);
    for tok in tokenize(text) {
        if POSITIVE_WORDS.contains(&tok.as_str()) {
            pos += 1;
        } else if NEGATIVE_WORDS.contains(&tok.as_str()) {
            neg += 1;
        }
    }
    if pos + neg == 0 {
        0.0
    } else {
        (pos as f64 - neg as f64) / (pos + neg) as f64
    }
}

/// Summary statistics of one behavior trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub reviews: usize,
    pub avg_rating: Option<f64>,
    pub rating_counts: [usize; 5],
    pub sentiment: f64,
    pub mean_helpfulness: f64,
    pub distinct_items: usize,
    pub span_days: f64,
}

impl TraceStats {
    pub fn of(trace: &BehaviorTrace) -> Self {
        let recs = trace.records();
        let mut rating_counts = [0usize; 5];
        for r in recs {
            rating_counts[(r.rating - 1) as usize] += 1;
        }
        let mean_helpfulness = if recs.is_empty() {
            0.0
        } else {
            recs.iter().map(|r| r.helpfulness).sum::<f64>() / recs.len() as f64
        };
        let span_days = match (recs.first(), recs.last()) {
            (Some(a), Some(b)) => (b.timestamp - a.timestamp) as f64 / 86_400.0,
            _ => 0.0,
        };
        Self {
            reviews: recs.len(),
            avg_rating: trace.mean_rating(),
            rating_counts,
            sentiment: sentiment(&trace.joined_text()),
            mean_helpfulness,
            distinct_items: trace.item_set().len(),
            span_days,
        }
    }

    fn avg_rating_str(&self) -> String {
        self.avg_rating
            .map_or_else(|| "n/a".into(), |r| format!("{r:.2}"))
    }

    fn distribution_str(&self) -> String {
        self.rating_counts
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}-star {c}", i + 1))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Neighborhood information rendered as graph relation context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationContext {
    /// Neighbor count per relation, in relation order.
    pub neighbor_counts: Vec<(String, usize)>,
    /// Mean RBF similarity of the node's features to its neighbors.
    pub behavior_similarity: Option<f64>,
    pub fraud_neighbors: usize,
    pub benign_neighbors: usize,
    pub unlabeled_neighbors: usize,
}

impl RelationContext {
    fn render(&self) -> String {
        let meta = if self.neighbor_counts.is_empty() {
            "none".to_string()
        } else {
            self.neighbor_counts
                .iter()
                .map(|(r, c)| format!("{r} {c}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let sim = self
            .behavior_similarity
            .map_or_else(|| "n/a".into(), |s| format!("{s:.4}"));
        format!(
            "[Neighbor Metadata: {meta} | Behavior Similarities: mean feature similarity {sim} | Risk Distribution: {} known fraud, {} known benign, {} unlabeled]",
            self.fraud_neighbors, self.benign_neighbors, self.unlabeled_neighbors
        )
    }

    fn render_short(&self) -> String {
        self.neighbor_counts
            .iter()
            .map(|(r, c)| format!("{r} {c}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Precomputed neighbor lists for building relation contexts.
pub struct ContextBuilder<'a> {
    bundle: &'a GraphBundle,
    per_relation: Vec<Vec<Vec<usize>>>,
    homo: Vec<Vec<usize>>,
    gamma: f64,
}

impl<'a> ContextBuilder<'a> {
    pub fn new(bundle: &'a GraphBundle) -> Self {
        let n = bundle.graph.node_count();
        let per_relation = bundle
            .graph
            .relations()
            .iter()
            .map(|r| neighbor_lists(n, bundle.graph.relation_edges(r).expect("known relation")))
            .collect();
        let homo = bundle
            .graph
            .neighbors(&RelationSel::All)
            .expect("projection");
        let gamma = 1.0 / bundle.features.dim().max(1) as f64;
        Self {
            bundle,
            per_relation,
            homo,
            gamma,
        }
    }

    pub fn context(&self, v: usize, labels: &LabelStore) -> RelationContext {
        let neighbor_counts = self
            .bundle
            .graph
            .relations()
            .iter()
            .zip(&self.per_relation)
            .map(|(r, adj)| (r.clone(), adj[v].len()))
            .collect();
        let nbrs = &self.homo[v];
        let behavior_similarity = if nbrs.is_empty() || self.bundle.features.dim() == 0 {
            None
        } else {
            let xv = self.bundle.features.row(v);
            let total: f64 = nbrs
                .iter()
                .map(|&u| {
                    let d2: f64 = xv
                        .iter()
                        .zip(self.bundle.features.row(u))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (-self.gamma * d2).exp()
                })
                .sum();
            Some(total / nbrs.len() as f64)
        };
        let mut ctx = RelationContext {
            neighbor_counts,
            behavior_similarity,
            fraud_neighbors: 0,
            benign_neighbors: 0,
            unlabeled_neighbors: 0,
        };
        for &u in nbrs {
            match labels.label(u) {
                Some(1) => ctx.fraud_neighbors += 1,
                Some(_) => ctx.benign_neighbors += 1,
                None => ctx.unlabeled_neighbors += 1,
            }
        }
        ctx
    }
}

/// Inputs describing one exemplar case.
#[derive(Debug, Clone, PartialEq)]
pub struct ExemplarCase {
    pub uid: String,
    pub label: u8,
    pub stats: TraceStats,
    pub context: RelationContext,
}

/// Everything the profile prompt renders for its target.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileInput<'a> {
    pub uid: &'a str,
    pub stats: TraceStats,
    pub context: RelationContext,
    pub trace: &'a BehaviorTrace,
    /// Fraud cases first, then benign cases.
    pub exemplars: Vec<ExemplarCase>,
}

impl<'a> ProfileInput<'a> {
    /// Gathers a target's inputs from the bundle.
    pub fn gather(
        bundle: &'a GraphBundle,
        ctx: &ContextBuilder<'_>,
        labels: &LabelStore,
        v: usize,
        ex: &ExemplarSet,
    ) -> Self {
        let case = |node: usize, label: u8| ExemplarCase {
            uid: bundle.ids[node].clone(),
            label,
            stats: TraceStats::of(&bundle.traces[node]),
            context: ctx.context(node, labels),
        };
        let exemplars = ex
            .fraud
            .iter()
            .map(|e| case(e.node, 1))
            .chain(ex.benign.iter().map(|e| case(e.node, 0)))
            .collect();
        Self {
            uid: &bundle.ids[v],
            stats: TraceStats::of(&bundle.traces[v]),
            context: ctx.context(v, labels),
            trace: &bundle.traces[v],
            exemplars,
        }
    }
}

fn format_date(ts: i64) -> String {
    chrono::DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| format!("t{ts}"))
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One trace record as `Date | Product | Star Rating | Text | Helpfulness`.
pub fn render_record(r: &TraceRecord) -> String {
    format!(
        "{} | Product {} | {} stars | \"{}\" | Helpfulness {:.2}",
        format_date(r.timestamp),
        one_line(&r.item_id),
        r.rating,
        one_line(&r.text),
        r.helpfulness
    )
}

fn render_traces(trace: &BehaviorTrace) -> String {
    if trace.is_empty() {
        return " none".into();
    }
    let mut out = String::new();
    for (i, r) in trace.records().iter().enumerate() {
        let _ = write!(out, "\n  {}. {}", i + 1, render_record(r));
    }
    out
}

pub fn build_profile_prompt(input: &ProfileInput<'_>, pctx: &PromptContext) -> Prompt {
    let system = format!("[Role]\n{PROFILE_SYSTEM}");
    let mut user = String::new();
    let _ = writeln!(
        user,
        "You are given reference cases, target user information, graph context, neighbor distribution, and review history. {}, where users may show fraudulent behavior through abnormal review activity and camouflaged relations.",
        pctx.dataset
    );
    user.push_str("\n[Exemplars]\nFew-Shot Exemplars:");
    if input.exemplars.is_empty() {
        user.push_str(" none");
    }
    for (i, ex) in input.exemplars.iter().enumerate() {
        let class = if ex.label == 1 { "fraud" } else { "benign" };
        let _ = write!(
            user,
            "\n  Case {} ({class} reference): Node {} | Reviews {} | Avg rating {} | Rating distribution: {} | Sentiment score {:.2} | Relation context: {} | Ground-truth label: {class}",
            i + 1,
            ex.uid,
            ex.stats.reviews,
            ex.stats.avg_rating_str(),
            ex.stats.distribution_str(),
            ex.stats.sentiment,
            ex.context.render_short(),
        );
    }
    let s = &input.stats;
    let _ = write!(
        user,
        "\n\n[Target Node]\nTarget User: Node ID: {} | Total reviews: {} | Avg. rating: {}\nTarget Statistics: Rating distribution: {} | Sentiment score: {:.2} | Mean helpfulness: {:.2} | Distinct products: {} | Active span: {:.1} days\nGraph Relation Context: {}\nReview Traces (chronological, Date | Product | Star Rating | Text Content | Helpfulness Score):{}\n\n",
        input.uid,
        s.reviews,
        s.avg_rating_str(),
        s.distribution_str(),
        s.sentiment,
        s.mean_helpfulness,
        s.distinct_items,
        s.span_days,
        input.context.render(),
        render_traces(input.trace),
    );
    user.push_str(PROFILE_TASK);
    user.push_str("\n\n[Output]\n1) User Profile Summary -> 2) Behavior Pattern Analysis -> 3) Fraud Signal Analysis -> 4) Overall Assessment\n");
    Prompt {
        kind: PromptKind::Profile,
        system,
        user,
    }
}

/// One endpoint of an audited connection.
#[derive(Debug, Clone, Copy)]
pub struct AuditEndpoint<'a> {
    pub node: usize,
    pub uid: &'a str,
    pub score: f64,
    pub trace: &'a BehaviorTrace,
}

/// Orders two endpoints as (suspected fraud, suspected benign): the higher
/// score is the suspected fraud side; on equal scores, the larger node id.
pub fn assign_roles<'a>(
    a: AuditEndpoint<'a>,
    b: AuditEndpoint<'a>,
) -> (AuditEndpoint<'a>, AuditEndpoint<'a>) {
    if a.score > b.score || (a.score == b.score && a.node > b.node) {
        (a, b)
    } else {
        (b, a)
    }
}

pub fn build_audit_prompt(
    a: AuditEndpoint<'_>,
    b: AuditEndpoint<'_>,
    pctx: &PromptContext,
) -> Prompt {
    let (fraud, benign) = assign_roles(a, b);
    let magnitude = (fraud.score - benign.score).abs();
    let system = format!("[Role]\n{AUDIT_SYSTEM}");
    let mut user = String::new();
    let _ = write!(
        user,
        "You are given a suspicious connection, preliminary risk information, and the review histories of two connected users.\n{}, where suspicious user connections may either support fraud detection or reflect relation camouflage.\nRoles: User A is the Suspected Fraud Node and User B is the Suspected Benign Node, assigned by relative preliminary risk score.\n\n[Target Connection]\nTarget Connection: [User A {} (Suspected Fraud Node) & User B {} (Suspected Benign Node) | Risk scores: {:.4} / {:.4} | Contradictory Magnitude: {:.4}]\nUser A Review Traces (chronological, Date | Product | Star Rating | Text Content | Helpfulness Score):{}\nUser B Review Traces (chronological, Date | Product | Star Rating | Text Content | Helpfulness Score):{}\n\n",
        pctx.dataset,
        fraud.uid,
        benign.uid,
        fraud.score,
        benign.score,
        magnitude,
        render_traces(fraud.trace),
        render_traces(benign.trace),
    );
    user.push_str(AUDIT_TASK);
    user.push_str("\n\n[Output]\n1) Connection Overview -> 2) Behavior Difference -> 3) Connection Intent Analysis -> 4) Counter Evidence and Uncertainty -> 5) Risk Verdict\n");
    Prompt {
        kind: PromptKind::Audit,
        system,
        user,
    }
}
