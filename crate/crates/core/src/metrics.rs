//! Classification metrics: accuracy, macro precision/recall/F1, per-class F1,
//! confusion matrices and coverage accounting for abstaining classifiers.
//!
//! Macro F1 is the unweighted mean of per-class F1. Undefined precision or
//! recall (zero denominator) counts as 0 and flags the class as degenerate.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{label_list, ClassLabel, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub truth: ClassLabel,
    pub predicted: ClassLabel,
    pub abstained: bool,
}

impl Prediction {
    pub const fn new(truth: ClassLabel, predicted: ClassLabel) -> Self {
        Self { truth, predicted, abstained: false }
    }

    pub const fn abstaining(truth: ClassLabel, predicted: ClassLabel) -> Self {
        Self { truth, predicted, abstained: true }
    }
}

/// Rows are true labels, columns predicted labels. Abstentions are kept out
/// of the grid and tallied per true label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<ClassLabel>,
    pub counts: Vec<Vec<u64>>,
    pub abstained: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(labels: &[ClassLabel]) -> Self {
        let k = labels.len();
        Self { labels: labels.to_vec(), counts: vec![vec![0; k]; k], abstained: vec![0; k] }
    }

    fn position(&self, label: ClassLabel) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn get(&self, truth: ClassLabel, predicted: ClassLabel) -> Option<u64> {
        Some(self.counts[self.position(truth)?][self.position(predicted)?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<ClassLabel, f64>,
    pub per_class: BTreeMap<ClassLabel, ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub coverage: f64,
    pub n_evaluated: usize,
    pub n_abstained: usize,
    pub include_abstained: bool,
    pub degenerate_classes: Vec<ClassLabel>,
    /// Filled in by callers that have probabilities available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ece: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn task_for(labels: &[ClassLabel]) -> Task {
    if labels == Task::Binary.active_classes() {
        Task::Binary
    } else {
        Task::Multi
    }
}

fn outside(kind: &str, label: ClassLabel, labels: &[ClassLabel]) -> Error {
    Error::InvalidInput(alloc::format!("{kind} label `{label}` not in [{}]", label_list(labels)))
}

/// Metrics over `labels`. Abstained pairs are left out unless
/// `include_abstained`, in which case they count as misses for accuracy and
/// recall (they never contribute a predicted positive).
pub fn compute_metrics(pairs: &[Prediction], labels: &[ClassLabel], include_abstained: bool) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("prediction pairs"));
    }
    if labels.len() < 2 {
        return Err(Error::TooFewClasses(labels.len()));
    }
    let mut cm = ConfusionMatrix::new(labels);
    for p in pairs {
        let t = cm.position(p.truth).ok_or_else(|| outside("true", p.truth, labels))?;
        if p.abstained {
            cm.abstained[t] += 1;
            continue;
        }
        let q = cm.position(p.predicted).ok_or_else(|| outside("predicted", p.predicted, labels))?;
        cm.counts[t][q] += 1;
    }
    let n_abstained = cm.abstained.iter().sum::<u64>() as usize;
    let n_evaluated = cm.total() as usize;
    let denominator = if include_abstained { n_evaluated + n_abstained } else { n_evaluated };
    if denominator == 0 {
        return Err(Error::EmptyInput("no non-abstained predictions"));
    }

    let k = labels.len();
    let mut per_class = BTreeMap::new();
    let mut degenerate_classes = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        let tp = cm.counts[i][i];
        let predicted: u64 = (0..k).map(|r| cm.counts[r][i]).sum();
        let mut actual: u64 = cm.counts[i].iter().sum();
        if include_abstained {
            actual += cm.abstained[i];
        }
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let degenerate = precision.is_none() || recall.is_none();
        if degenerate {
            degenerate_classes.push(label);
        }
        let (precision, recall) = (precision.unwrap_or(0.0), recall.unwrap_or(0.0));
        per_class.insert(
            label,
            ClassMetrics { precision, recall, f1: f1(precision, recall), support: actual, degenerate },
        );
    }
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.values().map(f).sum::<f64>() / k as f64;
    let macro_precision = mean(|m| m.precision);
    let macro_recall = mean(|m| m.recall);
    let macro_f1 = mean(|m| m.f1);
    let per_class_f1 = per_class.iter().map(|(&l, m)| (l, m.f1)).collect();
    let total = n_evaluated + n_abstained;

    Ok(MetricsReport {
        task: task_for(labels),
        accuracy: cm.trace() as f64 / denominator as f64,
        macro_precision,
        macro_recall,
        macro_f1,
        per_class_f1,
        per_class,
        confusion: cm,
        coverage: n_evaluated as f64 / total as f64,
        n_evaluated,
        n_abstained,
        include_abstained,
        degenerate_classes,
        ece: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub f1: f64,
    pub degenerate: bool,
}

/// One-vs-rest F1 of `target` over `(truth, predicted)` pairs.
pub fn f1_for_class(pairs: &[(ClassLabel, ClassLabel)], target: ClassLabel) -> F1Score {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for &(t, p) in pairs {
        match (t == target, p == target) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let degenerate = precision.is_none() || recall.is_none();
    F1Score { f1: f1(precision.unwrap_or(0.0), recall.unwrap_or(0.0)), degenerate }
}

/// Macro F1 straight from a square count matrix (rows true, columns
/// predicted), with the same zero-division policy as [`compute_metrics`].
pub fn macro_f1_from_counts<const N: usize>(counts: &[[u64; N]; N]) -> f64 {
    let mut sum = 0.0;
    for i in 0..N {
        let tp = counts[i][i];
        let predicted: u64 = (0..N).map(|r| counts[r][i]).sum();
        let actual: u64 = counts[i].iter().sum();
        sum += f1(ratio(tp, predicted).unwrap_or(0.0), ratio(tp, actual).unwrap_or(0.0));
    }
    sum / N as f64
}
