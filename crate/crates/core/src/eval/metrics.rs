use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("metric needs both classes ({positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("no positive labels")]
    NoPositives,
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    Ok((pos, labels.len() - pos))
}

fn both_classes(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), MetricError> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass {
            positives: pos,
            negatives: neg,
        });
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, split into groups of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve as the Mann–Whitney statistic with tied pairs
/// counted one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (pos, neg) = both_classes(scores, labels)?;
    // Walk groups from the top; each positive beats every negative below it.
    let mut neg_below = neg as f64;
    let mut total = 0.0;
    for g in tie_groups(scores) {
        let gp = g.iter().filter(|&&i| labels[i] == 1).count() as f64;
        let gn = g.len() as f64 - gp;
        neg_below -= gn;
        total += gp * (neg_below + 0.5 * gn);
    }
    Ok(total / (pos as f64 * neg as f64))
}

/// Average precision: mean over positives of the precision among all items
/// scoring at least as high. Equal scores share one cut-off.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let (mut tp, mut seen, mut sum) = (0usize, 0usize, 0.0);
    for g in tie_groups(scores) {
        let gp = g.iter().filter(|&&i| labels[i] == 1).count();
        tp += gp;
        seen += g.len();
        sum += gp as f64 * tp as f64 / seen as f64;
    }
    Ok(sum / pos as f64)
}

/// `2tp / (2tp + fp + fn)`, the harmonic mean of precision and recall in
/// a single division. Zero when the class is never hit.
fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Unweighted mean of the positive- and negative-class F1 when predicting
/// positive for `score >= threshold`.
pub fn macro_f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64, MetricError> {
    both_classes(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok((f1(tp, fp, fn_) + f1(tn, fn_, fp)) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub y: f64,
    pub threshold: f64,
}

/// Precision (y) against recall (x) at every distinct score cut-off.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<CurvePoint>, MetricError> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    Ok(tie_groups(scores)
        .into_iter()
        .map(|g| {
            tp += g.iter().filter(|&&i| labels[i] == 1).count();
            seen += g.len();
            CurvePoint {
                x: tp as f64 / pos as f64,
                y: tp as f64 / seen as f64,
                threshold: scores[g[0]],
            }
        })
        .collect())
}

/// True-positive rate (y) against false-positive rate (x), starting at the
/// origin.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<CurvePoint>, MetricError> {
    let (pos, neg) = both_classes(scores, labels)?;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut out = vec![CurvePoint {
        x: 0.0,
        y: 0.0,
        threshold: f64::INFINITY,
    }];
    for g in tie_groups(scores) {
        let gp = g.iter().filter(|&&i| labels[i] == 1).count();
        tp += gp;
        fp += g.len() - gp;
        out.push(CurvePoint {
            x: fp as f64 / neg as f64,
            y: tp as f64 / pos as f64,
            threshold: scores[g[0]],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auroc: f64,
    pub auprc: f64,
    pub macro_f1: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub threshold: f64,
}

impl MetricReport {
    pub fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self, MetricError> {
        let (n_pos, n_neg) = both_classes(scores, labels)?;
        Ok(Self {
            auroc: auroc(scores, labels)?,
            auprc: auprc(scores, labels)?,
            macro_f1: macro_f1(scores, labels, threshold)?,
            n_pos,
            n_neg,
            threshold,
        })
    }
}
