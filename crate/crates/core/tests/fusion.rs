mod common;

use l2ir::fusion::{
    cross_audit, fuse, partition_nodes, pool_all, pool_edge_intent, select_suspicious,
    FusedFeatures, FusionError,
};
use l2ir::graph::{HeteroGraph, NodeFeatures, RelationSel};
use l2ir::intent::{
    Embedding, LlmBackend, LlmClient, LlmError, MockBackend, Prompt, PromptContext, RetryPolicy,
};
use rand::Rng;
use std::sync::Arc;
use std::time::Duration;

#[test]
fn selection_matches_brute_force_on_random_graphs() {
    let mut rng = common::rng(21);
    for case in 0..100 {
        let n = rng.gen_range(2..=200);
        let n_rel = rng.gen_range(1..=3);
        let relations: Vec<(String, Vec<(usize, usize)>)> = (0..n_rel)
            .map(|r| {
                (
                    format!("r{r}"),
                    common::random_edges(n, rng.gen_range(1..6), &mut rng),
                )
            })
            .collect();
        let g = HeteroGraph::new(n, relations).unwrap();
        // Coarse scores so gaps tie often, with some exact threshold hits.
        let z: Vec<f64> = (0..n)
            .map(|_| match rng.gen_range(0..10) {
                0 => 0.8,
                1 => 0.2,
                _ => (rng.gen_range(0.0..1.0f64) * 20.0).round() / 20.0,
            })
            .collect();
        let s = rng.gen_range(1..60);
        let p = partition_nodes(&z, 0.8, 0.2).unwrap();
        let projected = g.edges(&RelationSel::All).unwrap();
        let got = select_suspicious(&projected, &p, &z, s);
        // The oracle sees every per-relation copy of an edge.
        let all: Vec<_> = g
            .relations()
            .iter()
            .flat_map(|r| g.relation_edges(r).unwrap().to_vec())
            .collect();
        let want = common::suspicious_oracle(&all, &z, 0.8, 0.2, s);
        let got: Vec<_> = got.edges.iter().map(|e| (e.edge, e.magnitude)).collect();
        assert_eq!(got, want, "case {case}");
    }
}

#[test]
fn thresholds_are_strict() {
    let p = partition_nodes(&[0.8, 0.2, 0.81, 0.19, 0.5], 0.8, 0.2).unwrap();
    assert_eq!(p.suspected_fraud, [2]);
    assert_eq!(p.suspected_benign, [3]);
    assert!(matches!(
        partition_nodes(&[0.5], 0.2, 0.8),
        Err(FusionError::Thresholds { .. })
    ));
}

#[test]
fn pooling_averages_incident_edges() {
    let e = |v: &[f64]| Embedding { values: v.to_vec() };
    let embs = vec![
        ((0, 1), e(&[1.0, 0.0])),
        ((1, 2), e(&[0.0, 1.0])),
        ((0, 2), e(&[3.0, 3.0])),
    ];
    assert_eq!(pool_edge_intent(1, &embs, 2).unwrap().values, [0.5, 0.5]);
    assert_eq!(pool_edge_intent(3, &embs, 2).unwrap().values, [0.0, 0.0]);
    let all = pool_all(4, &embs, 2).unwrap();
    for (v, pooled) in all.iter().enumerate() {
        assert_eq!(*pooled, pool_edge_intent(v, &embs, 2).unwrap());
    }
    assert!(pool_all(3, &[((0, 1), e(&[1.0]))], 2).is_err());
}

#[test]
fn fused_file_layout() {
    let x = NodeFeatures::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let e = |a: f64| Embedding {
        values: vec![a, a + 0.5],
    };
    let h = fuse(&x, &[e(10.0), e(20.0)], &[e(-1.0), e(-2.0)]).unwrap();
    assert_eq!((h.n, h.d, h.d_s, h.width()), (2, 2, 2, 6));
    assert_eq!(h.row(1), [3.0, 4.0, 20.0, 20.5, -2.0, -1.5]);
    let bytes = h.to_bytes();
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + header_len]).unwrap();
    assert_eq!(header, serde_json::json!({"n": 2, "d": 2, "d_s": 2}));
    let body = &bytes[8 + header_len..];
    assert_eq!(body.len(), 12 * 8);
    assert_eq!(
        f64::from_le_bytes(body[8 * 8..9 * 8].try_into().unwrap()),
        20.0
    );
    assert_eq!(FusedFeatures::from_bytes(&bytes).unwrap(), h);
    assert!(FusedFeatures::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

/// Fails every audit whose prompt mentions `poison`.
struct Picky {
    poison: String,
}

impl LlmBackend for Picky {
    fn model_id(&self) -> &str {
        "picky"
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, LlmError> {
        if prompt.user.contains(&self.poison) {
            Err(LlmError::Http {
                status: 400,
                body: "rejected".into(),
            })
        } else {
            MockBackend::new().complete(prompt)
        }
    }
}

fn audit_fixture() -> (l2ir::graph::GraphBundle, Vec<f64>) {
    let out = common::small_synth(300, 4, 0.8);
    let z: Vec<f64> = out
        .truth
        .labels
        .iter()
        .map(|&y| if y == 1 { 0.95 } else { 0.05 })
        .collect();
    (out.bundle, z)
}

#[test]
fn failed_audits_degrade_and_total_failure_is_an_error() {
    let (bundle, z) = audit_fixture();
    let p = partition_nodes(&z, 0.8, 0.2).unwrap();
    let es = select_suspicious(&bundle.graph.edges(&RelationSel::All).unwrap(), &p, &z, 50);
    assert!(es.len() > 2);
    let victim = bundle.ids[es.edges[0].edge.0].clone();
    let client = LlmClient::new(Arc::new(Picky {
        poison: format!("{victim} (Suspected"),
    }))
    .with_retry(RetryPolicy {
        max_retries: 0,
        base_delay: Duration::ZERO,
    });
    let reports = cross_audit(&es, &bundle, &z, &client, &PromptContext::default(), false).unwrap();
    assert_eq!(reports.len(), es.len());
    let degraded: Vec<_> = reports
        .iter()
        .filter(|r| r.degraded && r.text.is_empty())
        .collect();
    assert!(!degraded.is_empty() && degraded.len() < reports.len());

    let down = LlmClient::new(Arc::new(Picky {
        poison: "[Target Connection]".into(),
    }))
    .with_retry(RetryPolicy {
        max_retries: 0,
        base_delay: Duration::ZERO,
    });
    let err = cross_audit(&es, &bundle, &z, &down, &PromptContext::default(), false).unwrap_err();
    assert!(matches!(
        err,
        FusionError::Backend(LlmError::BackendDown(_))
    ));
}
