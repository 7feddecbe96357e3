//! Scoring of recovered cause sets.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub fp: Vec<usize>,
    #[serde(rename = "fn")]
    pub fn_: Vec<usize>,
    /// `(|FP| + |FN|) / p`.
    pub error_ratio: f64,
    /// `|FP| / (p − |S*|)`; 0 when every predictor is a cause.
    pub fpr: f64,
    /// 1 for an empty selection (see `empty_selection`).
    pub precision: f64,
    /// `|TP| / |S*|`; `None` when the truth is empty.
    pub recall: Option<f64>,
    pub empty_selection: bool,
}

pub fn score(selected: &[usize], truth: &[usize], p: usize) -> Score {
    let sel: BTreeSet<usize> = selected.iter().copied().collect();
    let tru: BTreeSet<usize> = truth.iter().copied().collect();
    let fp: Vec<usize> = sel.difference(&tru).copied().collect();
    let fn_: Vec<usize> = tru.difference(&sel).copied().collect();
    let tp = sel.intersection(&tru).count();
    let negatives = p.saturating_sub(tru.len());
    Score {
        error_ratio: if p == 0 { 0.0 } else { (fp.len() + fn_.len()) as f64 / p as f64 },
        fpr: if negatives == 0 { 0.0 } else { fp.len() as f64 / negatives as f64 },
        precision: if sel.is_empty() { 1.0 } else { tp as f64 / sel.len() as f64 },
        recall: (!tru.is_empty()).then(|| tp as f64 / tru.len() as f64),
        empty_selection: sel.is_empty(),
        fp,
        fn_,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision–recall points from selecting every predictor whose statistic is
/// at least each distinct value (and `+∞`, the empty selection). NaN
/// statistics are never selected.
pub fn pr_curve(stats: &[f64], truth: &[usize]) -> Vec<PrPoint> {
    let p = stats.len();
    let mut thresholds: Vec<f64> = stats.iter().copied().filter(|s| !s.is_nan()).collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut points: Vec<PrPoint> = thresholds
        .into_iter()
        .map(|t| {
            let sel: Vec<usize> = (0..p).filter(|&k| stats[k] >= t).collect();
            let s = score(&sel, truth, p);
            PrPoint {
                threshold: t,
                precision: s.precision,
                recall: s.recall.unwrap_or(0.0),
            }
        })
        .collect();
    points.sort_by(|a, b| {
        a.recall
            .total_cmp(&b.recall)
            .then(b.threshold.total_cmp(&a.threshold))
    });
    points
}

/// Step-wise area under a precision–recall curve sorted by recall.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for pt in points {
        ap += (pt.recall - prev) * pt.precision;
        prev = pt.recall;
    }
    ap
}
