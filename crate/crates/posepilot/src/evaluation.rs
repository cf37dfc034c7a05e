//! Metrics and calibration over score files. The CLI, the sweep and the HTTP
//! service all go through these functions so their outputs agree exactly.

use posepilot_core::calibration::{expected_calibration_error, fit_temperature_with_bins, CalibrationResult, CalibrationSample, DEFAULT_BINS};
use posepilot_core::dataset::Manifest;
use posepilot_core::metrics::{compute_metrics, MetricsReport, Prediction};
use posepilot_core::report::fixed2;
use posepilot_core::zeroshot::ClassScores;
use posepilot_core::{ClassLabel, Task};

use crate::error::{Error, Result};
use crate::scores::ScoreRecord;
use crate::tables::TextTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub task: Task,
    pub include_abstained: bool,
    pub n_bins: usize,
}

impl EvalOptions {
    pub fn new(task: Task) -> Self {
        Self { task, include_abstained: false, n_bins: DEFAULT_BINS }
    }
}

fn check_task(s: &ClassScores, task: Task) -> Result<()> {
    let keys: Vec<ClassLabel> = s.similarities.keys().copied().collect();
    if keys != task.active_classes() {
        return Err(Error::Config(format!(
            "scores for `{}` cover [{}], which does not match the {} task",
            s.image_id,
            keys.iter().map(|l| l.as_str()).collect::<Vec<_>>().join(", "),
            task.as_str()
        )));
    }
    Ok(())
}

/// Metrics of `scores` against manifest truth, with ECE from the stored
/// probabilities over the records the metrics count.
pub fn evaluate_scores(scores: &[ClassScores], manifest: &Manifest, opts: &EvalOptions) -> Result<MetricsReport> {
    let mut preds = Vec::with_capacity(scores.len());
    let mut confs = Vec::new();
    for s in scores {
        check_task(s, opts.task)?;
        let truth = manifest
            .get(&s.image_id)
            .ok_or_else(|| Error::Config(format!("image_id `{}` is not in the manifest", s.image_id)))?
            .label;
        preds.push(if s.abstained { Prediction::abstaining(truth, s.predicted) } else { Prediction::new(truth, s.predicted) });
        if !s.abstained || opts.include_abstained {
            confs.push((s.probabilities[&s.predicted], !s.abstained && s.predicted == truth));
        }
    }
    let mut report = compute_metrics(&preds, opts.task.active_classes(), opts.include_abstained)?;
    if !confs.is_empty() {
        report.ece = Some(expected_calibration_error(&confs, opts.n_bins)?);
    }
    Ok(report)
}

/// Calibration pairs; truth comes from `true_label` or else the manifest.
pub fn calibration_samples(scores: &[ScoreRecord], manifest: Option<&Manifest>) -> Result<Vec<CalibrationSample>> {
    scores
        .iter()
        .map(|r| {
            let truth = match (r.true_label, manifest) {
                (Some(l), _) => l,
                (None, Some(m)) => m
                    .get(&r.scores.image_id)
                    .ok_or_else(|| Error::Config(format!("image_id `{}` is not in the manifest", r.scores.image_id)))?
                    .label,
                (None, None) => {
                    return Err(Error::Config(format!(
                        "`{}` has no true_label; pass the manifest",
                        r.scores.image_id
                    )))
                }
            };
            let labels: Vec<ClassLabel> = r.scores.similarities.keys().copied().collect();
            let label = labels.iter().position(|&l| l == truth).ok_or_else(|| {
                Error::Config(format!("true label `{truth}` of `{}` is not a scored class", r.scores.image_id))
            })?;
            Ok(CalibrationSample::new(r.scores.similarity_vector(), label))
        })
        .collect()
}

pub fn calibrate_scores(scores: &[ScoreRecord], manifest: Option<&Manifest>, n_bins: usize) -> Result<CalibrationResult> {
    Ok(fit_temperature_with_bins(&calibration_samples(scores, manifest)?, n_bins)?)
}

/// Re-applies temperature and abstention to stored scores.
pub fn rescore_all(scores: &[ClassScores], temperature: f64, abstain_margin: f64) -> Result<Vec<ClassScores>> {
    Ok(scores.iter().map(|s| s.rescored(temperature, abstain_margin)).collect::<std::result::Result<_, _>>()?)
}

/// One-row plain-text table for a single evaluation.
pub fn metrics_table(name: &str, report: &MetricsReport) -> String {
    let mut t = TextTable::new(&["Model", "Task", "Acc.", "Prec.", "Rec.", "F1", "Coverage"]);
    t.row(vec![
        name.to_string(),
        report.task.as_str().to_string(),
        fixed2(report.accuracy),
        fixed2(report.macro_precision),
        fixed2(report.macro_recall),
        fixed2(report.macro_f1),
        fixed2(report.coverage),
    ]);
    t.render()
}
