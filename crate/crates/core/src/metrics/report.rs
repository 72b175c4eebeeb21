use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{accuracy, confusion, f1_scores, per_class_summary, roc_auc, MeanDev, MetricsError, RocSeries};
use crate::taxonomy::{Level, TaxonomyRegistry};

/// Predictions and targets of one level for one surgery. `scores`, when
/// present, holds a probability vector per sample.
#[derive(Debug, Clone)]
pub struct LevelInput {
    pub surgery_id: String,
    pub preds: Vec<usize>,
    pub targets: Vec<usize>,
    pub scores: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub ordinal: usize,
    pub name: String,
    pub support: u64,
    /// One-vs-rest accuracy across surgeries.
    pub accuracy: MeanDev,
    /// F1 across the surgeries where the class was predicted or present.
    pub f1: Option<MeanDev>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: Level,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub classes: Vec<ClassRow>,
    #[serde(skip)]
    pub roc: Vec<Option<RocSeries>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub samples: usize,
    pub surgeries: usize,
    pub levels: Vec<LevelReport>,
}

pub fn evaluate_level(level: Level, input: &[LevelInput], registry: &TaxonomyRegistry) -> Result<LevelReport, MetricsError> {
    let n_classes = registry.len(level);
    let preds: Vec<usize> = input.iter().flat_map(|s| s.preds.iter().copied()).collect();
    let targets: Vec<usize> = input.iter().flat_map(|s| s.targets.iter().copied()).collect();
    let pooled_accuracy = accuracy(&preds, &targets)?;
    let pooled = f1_scores(&preds, &targets, n_classes)?;
    let pooled_counts = confusion(&preds, &targets, n_classes)?;

    let per_surgery = input
        .iter()
        .filter(|s| !s.preds.is_empty())
        .map(|s| confusion(&s.preds, &s.targets, n_classes))
        .collect::<Result<Vec<_>, _>>()?;

    let all_scores: Option<Vec<&Vec<f64>>> = input
        .iter()
        .map(|s| s.scores.as_ref())
        .collect::<Option<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect());
    if let Some(scores) = &all_scores {
        if scores.len() != targets.len() {
            return Err(MetricsError::LengthMismatch {
                preds: scores.len(),
                targets: targets.len(),
            });
        }
    }

    let mut classes = Vec::with_capacity(n_classes);
    let mut rocs = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let acc: Vec<f64> = per_surgery.iter().map(|counts| counts[c].accuracy()).collect();
        let f1: Vec<f64> = per_surgery
            .iter()
            .filter(|counts| counts[c].observed())
            .map(|counts| counts[c].f1())
            .collect();
        let roc = match &all_scores {
            Some(scores) => {
                let s: Vec<f64> = scores.iter().map(|v| v.get(c).copied().unwrap_or(0.0)).collect();
                let pos: Vec<bool> = targets.iter().map(|&t| t == c).collect();
                match roc_auc(&s, &pos) {
                    Ok(r) => Some(r),
                    Err(MetricsError::DegenerateClasses) => None,
                    Err(e) => return Err(e),
                }
            }
            None => None,
        };
        classes.push(ClassRow {
            ordinal: c,
            name: registry.name(level, c).unwrap_or_default().to_string(),
            support: pooled.per_class[c].support,
            accuracy: per_class_summary(&acc)?,
            f1: per_class_summary(&f1).ok(),
            auc: roc.as_ref().map(|r| r.auc),
        });
        rocs.push(roc);
    }
    debug_assert_eq!(pooled_counts.len(), n_classes);

    Ok(LevelReport {
        level,
        accuracy: pooled_accuracy,
        macro_f1: pooled.macro_f1,
        classes,
        roc: rocs,
    })
}

impl EvaluationReport {
    /// Plain-text tables, one per level, one row per class.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples: {}  surgeries: {}", self.samples, self.surgeries);
        for lr in &self.levels {
            let _ = writeln!(
                out,
                "\n{}  accuracy {:.2}%  macro F1 {:.2}%",
                lr.level,
                lr.accuracy * 100.0,
                lr.macro_f1 * 100.0
            );
            let _ = writeln!(out, "{:<36} {:>13} {:>13} {:>7} {:>7}", "Name", "Accuracy", "F1 Score", "AUC", "n");
            for row in &lr.classes {
                let f1 = row.f1.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
                let auc = row.auc.map(|a| format!("{a:.3}")).unwrap_or_else(|| "-".into());
                let name = format!("[{:02}] {}", row.ordinal + 1, row.name);
                let _ = writeln!(out, "{name:<36} {:>13} {f1:>13} {auc:>7} {:>7}", row.accuracy.to_string(), row.support);
            }
        }
        out
    }

    /// Writes `roc_{level}_{class-slug}.csv` (fpr,tpr,threshold) for every
    /// class with a defined curve. The origin row has an empty threshold.
    pub fn write_roc_csv(&self, dir: &Path, registry: &TaxonomyRegistry) -> std::io::Result<usize> {
        std::fs::create_dir_all(dir)?;
        let mut written = 0;
        for lr in &self.levels {
            for (c, roc) in lr.roc.iter().enumerate() {
                let Some(roc) = roc else { continue };
                let slug = registry.slug_of(lr.level, c).unwrap_or("unknown");
                let mut text = String::from("fpr,tpr,threshold\n");
                for (i, (x, y)) in roc.points.iter().enumerate() {
                    let th = if i == 0 { String::new() } else { format!("{}", roc.thresholds[i - 1]) };
                    let _ = writeln!(text, "{x},{y},{th}");
                }
                std::fs::write(dir.join(format!("roc_{}_{}.csv", lr.level, slug)), text)?;
                written += 1;
            }
        }
        Ok(written)
    }
}
