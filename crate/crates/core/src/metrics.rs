//! Accuracy, F1, and AUC, reported per test level across model snapshots.
//!
//! Reports average the metric scores of the retained snapshots (score
//! averaging, not weight averaging) and carry the per-snapshot breakdown
//! plus population standard deviations. The positive class for F1 is
//! `safe` (label 1), recorded in the report itself.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, Level};
use crate::encoding::EncodedSample;
use crate::model::{forward_with, ForwardOptions, ModelError, ModelParams};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("got {preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("metrics need at least one sample")]
    Empty,
    #[error("AUC needs both classes present")]
    SingleClass,
}

fn check_lengths(preds: usize, labels: usize) -> Result<(), MetricsError> {
    if preds != labels {
        return Err(MetricsError::LengthMismatch { preds, labels });
    }
    if labels == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy(preds: &[Label], labels: &[Label]) -> Result<f64, MetricsError> {
    check_lengths(preds.len(), labels.len())?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Harmonic mean of precision and recall for `positive`; zero when there
/// is nothing to average (no predicted and no actual positives counted).
pub fn f1(preds: &[Label], labels: &[Label], positive: Label) -> Result<f64, MetricsError> {
    check_lengths(preds.len(), labels.len())?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (p, l) in preds.iter().zip(labels) {
        match (*p == positive, *l == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

/// Area under the ROC curve in the rank (Mann-Whitney) formulation: the
/// probability that a random safe sample outscores a random unsafe one,
/// with ties worth one half.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64, MetricsError> {
    check_lengths(scores.len(), labels.len())?;
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l == Label::Safe).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // 1-based ranks, averaged over ties.
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg_rank;
        }
        i = j + 1;
    }

    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == Label::Safe)
        .map(|(r, _)| r)
        .sum();
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
}

/// Per-level evaluation across snapshots: metric means, population
/// standard deviations, and the per-snapshot breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: Option<Level>,
    pub n: usize,
    pub positive_class: Label,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub f1: f64,
    pub f1_std: f64,
    pub auc: f64,
    pub auc_std: f64,
    pub per_snapshot: Vec<SnapshotMetrics>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("evaluation needs at least one snapshot")]
    NoSnapshots,
}

/// Scores of one model over a test set, in sample order.
pub fn score_dataset(
    params: &ModelParams,
    test: &[EncodedSample],
    opts: ForwardOptions,
) -> Result<Vec<f64>, ModelError> {
    test.par_iter()
        .map(|s| forward_with(s, params, opts).map(|t| t.score))
        .collect()
}

pub fn predictions(scores: &[f64]) -> Vec<Label> {
    scores
        .iter()
        .map(|&s| if s >= 0.5 { Label::Safe } else { Label::Unsafe })
        .collect()
}

/// Evaluates every snapshot on the test set and averages the metric
/// scores across snapshots.
pub fn evaluate(
    snapshots: &[&ModelParams],
    test: &[EncodedSample],
    level: Option<Level>,
    opts: ForwardOptions,
) -> Result<EvalReport, EvalError> {
    if snapshots.is_empty() {
        return Err(EvalError::NoSnapshots);
    }
    let labels: Vec<Label> = test.iter().map(|s| s.label).collect();
    let mut per_snapshot = Vec::with_capacity(snapshots.len());
    for params in snapshots {
        let scores = score_dataset(params, test, opts)?;
        let preds = predictions(&scores);
        per_snapshot.push(SnapshotMetrics {
            accuracy: accuracy(&preds, &labels)?,
            f1: f1(&preds, &labels, Label::Safe)?,
            auc: auc(&scores, &labels)?,
        });
    }

    let stat = |pick: fn(&SnapshotMetrics) -> f64| {
        let values = Array1::from_iter(per_snapshot.iter().map(pick));
        let mean = values.mean().unwrap();
        let std = (values.mapv(|v| (v - mean) * (v - mean)).mean().unwrap()).sqrt();
        (mean, std)
    };
    let (accuracy, accuracy_std) = stat(|m| m.accuracy);
    let (f1, f1_std) = stat(|m| m.f1);
    let (auc, auc_std) = stat(|m| m.auc);

    Ok(EvalReport {
        level,
        n: test.len(),
        positive_class: Label::Safe,
        accuracy,
        accuracy_std,
        f1,
        f1_std,
        auc,
        auc_std,
        per_snapshot,
    })
}

/// Published reference scores of the memory-network row, used by the CLI
/// for side-by-side drift tracking.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceScores {
    pub level: Level,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
}

pub const REFERENCE_MEMORY_NETWORK: [ReferenceScores; 4] = [
    ReferenceScores {
        level: Level::L1,
        accuracy: 0.84,
        f1: 0.84,
        auc: 0.92,
    },
    ReferenceScores {
        level: Level::L2,
        accuracy: 0.86,
        f1: 0.85,
        auc: 0.93,
    },
    ReferenceScores {
        level: Level::L3,
        accuracy: 0.83,
        f1: 0.83,
        auc: 0.90,
    },
    ReferenceScores {
        level: Level::L4,
        accuracy: 0.82,
        f1: 0.82,
        auc: 0.90,
    },
];

/// Renders reports as a fixed-width table, one column group per level,
/// optionally with the published reference row underneath.
pub fn render_table(reports: &[EvalReport], compare_reference: bool) -> String {
    let mut out = String::new();
    let header_1: String = reports
        .iter()
        .map(|r| {
            let name = r
                .level
                .map(|l| format!("level {}", l.as_u8()))
                .unwrap_or_else(|| "overall".to_string());
            format!("{name:^23}")
        })
        .collect();
    out.push_str(&format!("{:10}{header_1}\n", ""));
    let header_2: String = reports
        .iter()
        .map(|_| format!("{:>7}{:>8}{:>8}", "acc", "F1", "auc"))
        .collect();
    out.push_str(&format!("{:10}{header_2}\n", ""));

    let mut means = String::new();
    let mut stds = String::new();
    for r in reports {
        means.push_str(&format!(
            "{:>7.3}{:>8.3}{:>8.3}",
            r.accuracy, r.f1, r.auc
        ));
        stds.push_str(&format!(
            "{:>7}{:>8}{:>8}",
            format!("({:.2})", r.accuracy_std),
            format!("({:.2})", r.f1_std),
            format!("({:.2})", r.auc_std)
        ));
    }
    out.push_str(&format!("{:10}{means}\n", "measured"));
    out.push_str(&format!("{:10}{stds}\n", ""));

    if compare_reference {
        let mut refs = String::new();
        for r in reports {
            let reference = r
                .level
                .and_then(|l| REFERENCE_MEMORY_NETWORK.iter().find(|x| x.level == l));
            match reference {
                Some(x) => refs.push_str(&format!(
                    "{:>7.2}{:>8.2}{:>8.2}",
                    x.accuracy, x.f1, x.auc
                )),
                None => refs.push_str(&format!("{:>7}{:>8}{:>8}", "-", "-", "-")),
            }
        }
        out.push_str(&format!("{:10}{refs}\n", "reference"));
    }
    out
}
