//! Classification metrics: accuracy, per-class F1, mean ± deviation
//! summaries and ROC/AUC.
//!
//! Conventions:
//! - precision, recall and F1 are 0 for a class with a 0/0 denominator;
//! - macro F1 averages only classes that occur in the targets;
//! - per-class accuracy is one-vs-rest binary accuracy;
//! - deviations are population standard deviations (divide by N).

mod report;

pub use report::{evaluate_level, ClassRow, EvaluationReport, LevelInput, LevelReport};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {preds} predictions vs {targets} targets")]
    LengthMismatch { preds: usize, targets: usize },
    #[error("empty input")]
    Empty,
    #[error("class {class} outside 0..{n_classes}")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("roc needs at least one positive and one negative")]
    DegenerateClasses,
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
}

fn check_lengths(preds: usize, targets: usize) -> Result<(), MetricsError> {
    if preds != targets {
        return Err(MetricsError::LengthMismatch { preds, targets });
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy<T: PartialEq>(preds: &[T], targets: &[T]) -> Result<f64, MetricsError> {
    check_lengths(preds.len(), targets.len())?;
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = preds.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// One-vs-rest counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR/(P+R)`, computed as `2tp/(2tp+fp+fn)`.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// Binary accuracy of "is this class" vs "is not".
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Present in the targets.
    pub fn in_targets(&self) -> bool {
        self.tp + self.fn_ > 0
    }

    /// Present in predictions or targets.
    pub fn observed(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

/// Per-class one-vs-rest confusion counts.
pub fn confusion(preds: &[usize], targets: &[usize], n_classes: usize) -> Result<Vec<ClassCounts>, MetricsError> {
    check_lengths(preds.len(), targets.len())?;
    if let Some(&class) = preds.iter().chain(targets).find(|&&c| c >= n_classes) {
        return Err(MetricsError::ClassOutOfRange { class, n_classes });
    }
    let n = preds.len() as u64;
    let mut counts = vec![ClassCounts::default(); n_classes];
    for (&p, &t) in preds.iter().zip(targets) {
        if p == t {
            counts[p].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[t].fn_ += 1;
        }
    }
    for c in &mut counts {
        c.tn = n - c.tp - c.fp - c.fn_;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<ClassScore>,
    /// Unweighted mean over classes present in the targets; 0 when none are.
    pub macro_f1: f64,
}

pub fn f1_scores(preds: &[usize], targets: &[usize], n_classes: usize) -> Result<F1Report, MetricsError> {
    let counts = confusion(preds, targets, n_classes)?;
    let per_class: Vec<ClassScore> = counts
        .iter()
        .map(|c| ClassScore {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            support: c.tp + c.fn_,
        })
        .collect();
    let present: Vec<f64> = counts
        .iter()
        .zip(&per_class)
        .filter(|(c, _)| c.in_targets())
        .map(|(_, s)| s.f1)
        .collect();
    let macro_f1 = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok(F1Report { per_class, macro_f1 })
}

/// ROC staircase, one point per distinct score plus the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSeries {
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    /// Score threshold reached at each point after the origin, descending.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

/// Sweeps a threshold down through the distinct scores. Tied scores move
/// the curve diagonally, which credits ties with one half under the
/// trapezoidal rule.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<RocSeries, MetricsError> {
    check_lengths(scores.len(), positives.len())?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateClasses);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().expect("origin");
        let (x1, y1) = (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
        thresholds.push(threshold);
    }
    Ok(RocSeries { points, thresholds, auc })
}

/// `mean ± deviation`, printed with two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDev {
    pub mean: f64,
    pub dev: f64,
}

impl fmt::Display for MeanDev {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.dev)
    }
}

/// Mean and population standard deviation of per-surgery values.
pub fn per_class_summary(values: &[f64]) -> Result<MeanDev, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(MeanDev { mean, dev: var.sqrt() })
}
