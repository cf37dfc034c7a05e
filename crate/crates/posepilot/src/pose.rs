//! Keypoint baseline evaluation and detector-driven keypoint ingest.

use std::path::Path;
use std::process::Command;

use posepilot_core::dataset::{ImageRecord, Manifest, PersonBox};
use posepilot_core::metrics::{compute_metrics, MetricsReport, Prediction};
use posepilot_core::posebaseline::{
    coverage_report, extract_features, fit_thresholds, primary_detection, rule_classify, CoverageReport, KeypointSkeleton,
    RuleThresholds, SkeletonFeatures, UnusableReason,
};
use posepilot_core::{ClassLabel, Split};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdSource {
    Default,
    /// Fit on the manifest's train split.
    Fit,
    File(std::path::PathBuf),
}

impl ThresholdSource {
    pub fn parse(arg: &str) -> Self {
        match arg {
            "default" => Self::Default,
            "fit" => Self::Fit,
            path => Self::File(path.into()),
        }
    }

    fn describe(&self) -> String {
        match self {
            Self::Default => "default".into(),
            Self::Fit => "fit".into(),
            Self::File(p) => p.display().to_string(),
        }
    }
}

pub fn parse_thresholds(text: &str, path: &Path) -> Result<RuleThresholds> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct File {
        sit_knee: f64,
        sit_hip: f64,
        stand_knee: f64,
        vertical: f64,
        spread: f64,
    }
    let f: File = toml::from_str(text).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(RuleThresholds { sit_knee: f.sit_knee, sit_hip: f.sit_hip, stand_knee: f.stand_knee, vertical: f.vertical, spread: f.spread })
}

pub fn thresholds_to_toml(th: &RuleThresholds) -> String {
    toml::to_string(th).expect("thresholds serialize to TOML")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseStatus {
    Covered,
    LowConfidence,
    DegenerateGeometry,
    MissingKeypoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecordResult {
    pub image_id: String,
    pub truth: ClassLabel,
    pub prediction: Option<ClassLabel>,
    pub status: PoseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<SkeletonFeatures>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub thresholds: RuleThresholds,
    pub thresholds_source: String,
    pub conf_threshold: f64,
    /// `test` or `all`.
    pub evaluated_on: String,
    pub coverage: CoverageReport,
    /// Metrics over covered records; absent when nothing was covered.
    pub metrics: Option<MetricsReport>,
    pub records: Vec<PoseRecordResult>,
}

fn features_of(r: &ImageRecord, conf: f64) -> Option<SkeletonFeatures> {
    r.keypoints.as_ref().map(|k| extract_features(k, conf))
}

pub fn evaluate_record(r: &ImageRecord, th: &RuleThresholds, conf: f64) -> PoseRecordResult {
    let features = features_of(r, conf);
    let (prediction, status) = match &features {
        None => (None, PoseStatus::MissingKeypoints),
        Some(f) => match rule_classify(f, th) {
            Some(p) => (Some(p), PoseStatus::Covered),
            None => match f.unusable_reason {
                Some(UnusableReason::DegenerateGeometry) => (None, PoseStatus::DegenerateGeometry),
                _ => (None, PoseStatus::LowConfidence),
            },
        },
    };
    PoseRecordResult { image_id: r.image_id.clone(), truth: r.label, prediction, status, features }
}

/// Fits on the train split when asked, then evaluates the test split (or
/// every record with `full_set`, or when the manifest has no test records).
pub fn pose_eval(manifest: &Manifest, source: &ThresholdSource, conf: f64, full_set: bool) -> Result<PoseReport> {
    if !(0.0..=1.0).contains(&conf) {
        return Err(Error::Config(format!("confidence threshold {conf} is outside [0, 1]")));
    }
    let thresholds = match source {
        ThresholdSource::Default => RuleThresholds::default(),
        ThresholdSource::File(p) => parse_thresholds(&fsutil::read_to_string(p)?, p)?,
        ThresholdSource::Fit => {
            let train: Vec<(SkeletonFeatures, ClassLabel)> = manifest
                .in_split(Split::Train)
                .filter_map(|r| Some((features_of(r, conf)?, r.label)))
                .collect();
            if train.is_empty() {
                return Err(Error::Config("fitting thresholds needs train records with keypoints; split the manifest first".into()));
            }
            fit_thresholds(&train)?
        }
    };
    let has_test = manifest.in_split(Split::Test).next().is_some();
    let (evaluated_on, eval): (&str, Vec<&ImageRecord>) = if full_set || !has_test {
        ("all", manifest.records().iter().collect())
    } else {
        ("test", manifest.in_split(Split::Test).collect())
    };
    let records: Vec<PoseRecordResult> = eval.iter().map(|r| evaluate_record(r, &thresholds, conf)).collect();
    let pairs: Vec<(Option<ClassLabel>, ClassLabel)> = records.iter().map(|r| (r.prediction, r.truth)).collect();
    let coverage = coverage_report(&pairs)?;
    let metrics = if coverage.n_covered > 0 {
        let preds: Vec<Prediction> = pairs
            .iter()
            .map(|&(p, t)| p.map_or(Prediction::abstaining(t, t), |p| Prediction::new(t, p)))
            .collect();
        Some(compute_metrics(&preds, &ClassLabel::ALL, false)?)
    } else {
        None
    };
    Ok(PoseReport {
        thresholds,
        thresholds_source: source.describe(),
        conf_threshold: conf,
        evaluated_on: evaluated_on.into(),
        coverage,
        metrics,
        records,
    })
}

#[derive(Debug, Clone, Deserialize)]
struct DetectorOutput {
    detections: Vec<Detection>,
}

#[derive(Debug, Clone, Deserialize)]
struct Detection {
    #[serde(rename = "box")]
    bbox: PersonBox,
    keypoints: Vec<f64>,
}

/// One audit line per record so the chosen detection can be traced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionAudit {
    pub image_id: String,
    pub n_detections: usize,
    pub chosen: Option<usize>,
    pub chosen_box: Option<PersonBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn run_detector(cmd: &str, image: &Path) -> Result<Vec<(PersonBox, KeypointSkeleton)>> {
    let out = Command::new("sh")
        .arg("-c")
        .arg(format!("{cmd} \"$1\""))
        .arg("sh")
        .arg(image)
        .output()
        .map_err(|e| Error::io(image, e))?;
    if !out.status.success() {
        return Err(Error::backend("detector", format!("exit {}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim())));
    }
    let parsed: DetectorOutput = serde_json::from_slice(&out.stdout)
        .map_err(|e| Error::backend("detector", format!("unreadable detector output: {e}")))?;
    parsed
        .detections
        .into_iter()
        .map(|d| Ok((d.bbox, KeypointSkeleton::from_flat(&d.keypoints)?)))
        .collect()
}

fn box_inside(b: &PersonBox, r: &ImageRecord) -> bool {
    b.x >= 0.0 && b.y >= 0.0 && b.w > 0.0 && b.h > 0.0 && b.x + b.w <= r.width_px as f64 && b.y + b.h <= r.height_px as f64
}

/// Runs `detector_cmd <image path>` per record and writes the largest
/// detection's keypoints into the record. A record without a person box
/// also takes the detection's box when it fits the image. Detector failures
/// are audited and leave the record unchanged.
pub fn pose_ingest(manifest: &Manifest, base_dir: &Path, detector_cmd: &str) -> Result<(Manifest, Vec<DetectionAudit>)> {
    let mut records = Vec::with_capacity(manifest.len());
    let mut audit = Vec::with_capacity(manifest.len());
    for r in manifest.records() {
        let mut r = r.clone();
        let path = fsutil::resolve(base_dir, &r.file_path);
        let entry = match run_detector(detector_cmd, &path) {
            Ok(dets) => {
                let chosen = primary_detection(&dets);
                if let Some(i) = chosen {
                    let (b, sk) = &dets[i];
                    r.keypoints = Some(sk.clone());
                    if r.person_box.is_none() && box_inside(b, &r) {
                        r.person_box = Some(*b);
                    }
                }
                DetectionAudit {
                    image_id: r.image_id.clone(),
                    n_detections: dets.len(),
                    chosen,
                    chosen_box: chosen.map(|i| dets[i].0),
                    error: None,
                }
            }
            Err(e) => DetectionAudit {
                image_id: r.image_id.clone(),
                n_detections: 0,
                chosen: None,
                chosen_box: None,
                error: Some(e.to_string()),
            },
        };
        audit.push(entry);
        records.push(r);
    }
    Ok((Manifest::new(records)?.with_resize_target(manifest.resize_target()), audit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_file_round_trip() {
        let th = RuleThresholds { sit_knee: 110.0, sit_hip: 115.0, stand_knee: 165.0, vertical: 10.0, spread: 0.4 };
        assert_eq!(parse_thresholds(&thresholds_to_toml(&th), Path::new("t.toml")).unwrap(), th);
        assert!(parse_thresholds("sit_knee = 1.0", Path::new("t.toml")).is_err());
    }

    #[test]
    fn missing_keypoints_abstain() {
        let r = ImageRecord::new("a", "a.png", ClassLabel::Sitting, 10, 10);
        let res = evaluate_record(&r, &RuleThresholds::default(), DEFAULT_CONF_THRESHOLD);
        assert_eq!(res.status, PoseStatus::MissingKeypoints);
        assert_eq!(res.prediction, None);
    }
}
