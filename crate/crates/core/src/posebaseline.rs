//! Keypoint-geometry baseline: 17-point skeletons, joint angles and a
//! threshold rule over them.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dataset::PersonBox;
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::math;
use crate::metrics;

pub const NUM_KEYPOINTS: usize = 17;

/// Canonical COCO keypoint indices.
pub mod kp {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;
}

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub const fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }
}

/// Serialized as a flat list of 51 numbers, `x, y, confidence` per joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct KeypointSkeleton {
    points: [Keypoint; NUM_KEYPOINTS],
}

impl KeypointSkeleton {
    pub fn new(points: [Keypoint; NUM_KEYPOINTS]) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(Error::InvalidInput(alloc::format!("keypoint {i} has non-finite coordinates")));
            }
            if !(0.0..=1.0).contains(&p.confidence) {
                return Err(Error::InvalidInput(alloc::format!(
                    "keypoint {i} confidence {} outside [0, 1]",
                    p.confidence
                )));
            }
        }
        Ok(Self { points })
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_KEYPOINTS * 3 {
            return Err(Error::InvalidInput(alloc::format!(
                "expected {} keypoint values, got {}",
                NUM_KEYPOINTS * 3,
                values.len()
            )));
        }
        let mut points = [Keypoint::default(); NUM_KEYPOINTS];
        for (p, c) in points.iter_mut().zip(values.chunks_exact(3)) {
            *p = Keypoint::new(c[0], c[1], c[2]);
        }
        Self::new(points)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.confidence]).collect()
    }

    pub fn points(&self) -> &[Keypoint; NUM_KEYPOINTS] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Keypoint {
        self.points[index]
    }

    /// Applies `f` to every coordinate pair, keeping confidences.
    pub fn map_coords(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> KeypointSkeleton {
        let mut points = self.points;
        for p in points.iter_mut() {
            let (x, y) = f(p.x, p.y);
            p.x = x;
            p.y = y;
        }
        KeypointSkeleton { points }
    }

    /// Tight box around confident joints.
    pub fn bounding_box(&self, conf_threshold: f64) -> Option<PersonBox> {
        let pts: Vec<&Keypoint> = self.points.iter().filter(|p| p.confidence >= conf_threshold).collect();
        let first = pts.first()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for p in &pts {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Some(PersonBox::new(x0, y0, x1 - x0, y1 - y0))
    }
}

impl TryFrom<Vec<f64>> for KeypointSkeleton {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::from_flat(&v)
    }
}

impl From<KeypointSkeleton> for Vec<f64> {
    fn from(s: KeypointSkeleton) -> Self {
        s.to_flat()
    }
}

/// Picks the detection with the largest box area; earlier entries win ties.
pub fn primary_detection(detections: &[(PersonBox, KeypointSkeleton)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (b, _)) in detections.iter().enumerate() {
        if best.map_or(true, |(_, area)| b.area() > area) {
            best = Some((i, b.area()));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnusableReason {
    LowConfidence,
    DegenerateGeometry,
}

/// Angles are interior angles in degrees. A side's knee/hip angles are
/// present only when that side's shoulder, hip, knee and ankle are all
/// confident and non-coincident.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonFeatures {
    pub knee_angle_left: Option<f64>,
    pub knee_angle_right: Option<f64>,
    pub hip_angle_left: Option<f64>,
    pub hip_angle_right: Option<f64>,
    /// Angle between the shoulder-to-hip segment and the image vertical, in [0, 90].
    pub torso_verticality: Option<f64>,
    /// Horizontal ankle distance over torso length.
    pub ankle_spread: Option<f64>,
    pub usable: bool,
    pub unusable_reason: Option<UnusableReason>,
}

impl SkeletonFeatures {
    pub fn mean_knee_angle(&self) -> Option<f64> {
        mean_present(self.knee_angle_left, self.knee_angle_right)
    }

    pub fn mean_hip_angle(&self) -> Option<f64> {
        mean_present(self.hip_angle_left, self.hip_angle_right)
    }
}

fn mean_present(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some((a + b) / 2.0),
        (Some(v), None) | (None, Some(v)) => Some(v),
        (None, None) => None,
    }
}

/// Interior angle at `vertex` between the rays to `a` and `b`, in degrees.
/// `None` when either ray has zero length.
pub fn joint_angle(a: (f64, f64), vertex: (f64, f64), b: (f64, f64)) -> Option<f64> {
    let (ux, uy) = (a.0 - vertex.0, a.1 - vertex.1);
    let (vx, vy) = (b.0 - vertex.0, b.1 - vertex.1);
    if (ux == 0.0 && uy == 0.0) || (vx == 0.0 && vy == 0.0) {
        return None;
    }
    let mut diff = (math::atan2(uy, ux) - math::atan2(vy, vx)).abs();
    if diff > core::f64::consts::PI {
        diff = 2.0 * core::f64::consts::PI - diff;
    }
    Some(diff.to_degrees())
}

struct Side {
    shoulder: usize,
    hip: usize,
    knee: usize,
    ankle: usize,
}

const LEFT: Side = Side {
    shoulder: kp::LEFT_SHOULDER,
    hip: kp::LEFT_HIP,
    knee: kp::LEFT_KNEE,
    ankle: kp::LEFT_ANKLE,
};
const RIGHT: Side = Side {
    shoulder: kp::RIGHT_SHOULDER,
    hip: kp::RIGHT_HIP,
    knee: kp::RIGHT_KNEE,
    ankle: kp::RIGHT_ANKLE,
};

fn xy(p: Keypoint) -> (f64, f64) {
    (p.x, p.y)
}

fn midpoint(a: Keypoint, b: Keypoint) -> (f64, f64) {
    ((a.x + b.x) / 2.0, (a.y + b.y) / 2.0)
}

pub fn extract_features(sk: &KeypointSkeleton, conf_threshold: f64) -> SkeletonFeatures {
    let confident = |i: usize| sk.point(i).confidence >= conf_threshold;
    let side_confident = |s: &Side| [s.shoulder, s.hip, s.knee, s.ankle].iter().all(|&i| confident(i));

    let side_angles = |s: &Side| -> (Option<f64>, Option<f64>, bool) {
        if !side_confident(s) {
            return (None, None, false);
        }
        let (sh, hp, kn, an) = (xy(sk.point(s.shoulder)), xy(sk.point(s.hip)), xy(sk.point(s.knee)), xy(sk.point(s.ankle)));
        match (joint_angle(hp, kn, an), joint_angle(sh, hp, kn)) {
            (Some(k), Some(h)) => (Some(k), Some(h), false),
            _ => (None, None, true),
        }
    };
    let (knee_l, hip_l, degen_l) = side_angles(&LEFT);
    let (knee_r, hip_r, degen_r) = side_angles(&RIGHT);

    // torso axis from midpoints when all four joints are confident, else the
    // single usable side
    let torso = if [kp::LEFT_SHOULDER, kp::RIGHT_SHOULDER, kp::LEFT_HIP, kp::RIGHT_HIP]
        .iter()
        .all(|&i| confident(i))
    {
        Some((
            midpoint(sk.point(kp::LEFT_SHOULDER), sk.point(kp::RIGHT_SHOULDER)),
            midpoint(sk.point(kp::LEFT_HIP), sk.point(kp::RIGHT_HIP)),
        ))
    } else if knee_l.is_some() {
        Some((xy(sk.point(kp::LEFT_SHOULDER)), xy(sk.point(kp::LEFT_HIP))))
    } else if knee_r.is_some() {
        Some((xy(sk.point(kp::RIGHT_SHOULDER)), xy(sk.point(kp::RIGHT_HIP))))
    } else {
        None
    };

    let mut torso_len = None;
    let mut torso_degenerate = false;
    let torso_verticality = torso.and_then(|(shoulders, hips)| {
        let (dx, dy) = (hips.0 - shoulders.0, hips.1 - shoulders.1);
        if dx == 0.0 && dy == 0.0 {
            torso_degenerate = true;
            return None;
        }
        torso_len = Some(math::sqrt(dx * dx + dy * dy));
        Some(math::atan2(dx.abs(), dy.abs()).to_degrees())
    });

    let ankle_spread = match torso_len {
        Some(len) if confident(kp::LEFT_ANKLE) && confident(kp::RIGHT_ANKLE) => {
            Some((sk.point(kp::LEFT_ANKLE).x - sk.point(kp::RIGHT_ANKLE).x).abs() / len)
        }
        _ => None,
    };

    let has_side = knee_l.is_some() || knee_r.is_some();
    let usable = has_side && torso_verticality.is_some();
    let unusable_reason = if usable {
        None
    } else if degen_l || degen_r || torso_degenerate {
        Some(UnusableReason::DegenerateGeometry)
    } else {
        Some(UnusableReason::LowConfidence)
    };

    SkeletonFeatures {
        knee_angle_left: knee_l,
        knee_angle_right: knee_r,
        hip_angle_left: hip_l,
        hip_angle_right: hip_r,
        torso_verticality,
        ankle_spread,
        usable,
        unusable_reason,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleThresholds {
    pub sit_knee: f64,
    pub sit_hip: f64,
    pub stand_knee: f64,
    pub vertical: f64,
    pub spread: f64,
}

impl Default for RuleThresholds {
    fn default() -> Self {
        Self { sit_knee: 120.0, sit_hip: 120.0, stand_knee: 160.0, vertical: 15.0, spread: 0.35 }
    }
}

/// Rule evaluated in fixed order: sitting, standing, otherwise
/// walking/running. `None` means the skeleton was unusable (abstained).
/// A missing ankle spread does not block the standing branch.
pub fn rule_classify(f: &SkeletonFeatures, th: &RuleThresholds) -> Option<ClassLabel> {
    if !f.usable {
        return None;
    }
    let knee = f.mean_knee_angle()?;
    let hip = f.mean_hip_angle()?;
    let vert = f.torso_verticality?;
    Some(classify_values(knee, hip, vert, f.ankle_spread, th))
}

fn classify_values(knee: f64, hip: f64, vert: f64, spread: Option<f64>, th: &RuleThresholds) -> ClassLabel {
    if knee < th.sit_knee && hip < th.sit_hip {
        ClassLabel::Sitting
    } else if knee > th.stand_knee && vert < th.vertical && spread.map_or(true, |s| s < th.spread) {
        ClassLabel::Standing
    } else {
        ClassLabel::WalkingRunning
    }
}

/// Candidate values searched by [`fit_thresholds`].
pub struct ThresholdGrid {
    pub sit_knee: Vec<f64>,
    pub sit_hip: Vec<f64>,
    pub stand_knee: Vec<f64>,
    pub vertical: Vec<f64>,
    pub spread: Vec<f64>,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        let steps = |lo: u32, hi: u32, step: u32| (lo..=hi).step_by(step as usize).map(f64::from).collect();
        Self {
            sit_knee: steps(90, 150, 5),
            sit_hip: steps(90, 150, 5),
            stand_knee: steps(150, 175, 5),
            vertical: steps(5, 30, 5),
            spread: (1..=6).map(|i| f64::from(i) / 10.0).collect(),
        }
    }
}

impl ThresholdGrid {
    pub fn len(&self) -> usize {
        self.sit_knee.len() * self.sit_hip.len() * self.stand_knee.len() * self.vertical.len() * self.spread.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Distance from the defaults measured in grid steps (5 degrees, 0.1 spread).
fn distance_to_defaults(t: &RuleThresholds) -> f64 {
    let d = RuleThresholds::default();
    (t.sit_knee - d.sit_knee).abs() / 5.0
        + (t.sit_hip - d.sit_hip).abs() / 5.0
        + (t.stand_knee - d.stand_knee).abs() / 5.0
        + (t.vertical - d.vertical).abs() / 5.0
        + (t.spread - d.spread).abs() / 0.1
}

struct UsableSample {
    knee: f64,
    hip: f64,
    vert: f64,
    spread: Option<f64>,
    truth: ClassLabel,
}

fn training_macro_f1(samples: &[UsableSample], th: &RuleThresholds) -> f64 {
    let mut counts = [[0u64; 3]; 3];
    for s in samples {
        let p = classify_values(s.knee, s.hip, s.vert, s.spread, th);
        counts[s.truth.index()][p.index()] += 1;
    }
    metrics::macro_f1_from_counts(&counts)
}

pub fn fit_thresholds(train: &[(SkeletonFeatures, ClassLabel)]) -> Result<RuleThresholds> {
    fit_thresholds_on_grid(train, &ThresholdGrid::default())
}

/// Exhaustive search maximizing training macro F1 over usable samples.
/// The defaults win any tie with the best grid score; otherwise ties go to
/// the candidate nearest the defaults, then to enumeration order.
pub fn fit_thresholds_on_grid(
    train: &[(SkeletonFeatures, ClassLabel)],
    grid: &ThresholdGrid,
) -> Result<RuleThresholds> {
    let samples: Vec<UsableSample> = train
        .iter()
        .filter(|(f, _)| f.usable)
        .filter_map(|(f, truth)| {
            Some(UsableSample {
                knee: f.mean_knee_angle()?,
                hip: f.mean_hip_angle()?,
                vert: f.torso_verticality?,
                spread: f.ankle_spread,
                truth: *truth,
            })
        })
        .collect();
    for label in ClassLabel::ALL {
        if !samples.iter().any(|s| s.truth == label) {
            return Err(Error::NoUsableSamples(label));
        }
    }

    let defaults = RuleThresholds::default();
    let default_score = training_macro_f1(&samples, &defaults);
    let mut best: Option<(RuleThresholds, f64, f64)> = None;
    for &sit_knee in &grid.sit_knee {
        for &sit_hip in &grid.sit_hip {
            for &stand_knee in &grid.stand_knee {
                for &vertical in &grid.vertical {
                    for &spread in &grid.spread {
                        let t = RuleThresholds { sit_knee, sit_hip, stand_knee, vertical, spread };
                        let score = training_macro_f1(&samples, &t);
                        let dist = distance_to_defaults(&t);
                        let better = match &best {
                            None => true,
                            Some((_, s, d)) => score > *s || (score == *s && dist < *d),
                        };
                        if better {
                            best = Some((t, score, dist));
                        }
                    }
                }
            }
        }
    }
    match best {
        Some((t, score, _)) if score > default_score => Ok(t),
        _ => Ok(defaults),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub n_total: usize,
    pub n_covered: usize,
    pub n_correct: usize,
    pub coverage: f64,
    /// `None` when nothing was covered.
    pub accuracy_on_covered: Option<f64>,
}

/// `results` pairs a prediction (`None` = abstained) with the truth.
pub fn coverage_report(results: &[(Option<ClassLabel>, ClassLabel)]) -> Result<CoverageReport> {
    if results.is_empty() {
        return Err(Error::EmptyInput("coverage results"));
    }
    let n_total = results.len();
    let n_covered = results.iter().filter(|(p, _)| p.is_some()).count();
    let n_correct = results.iter().filter(|(p, t)| *p == Some(*t)).count();
    Ok(CoverageReport {
        n_total,
        n_covered,
        n_correct,
        coverage: n_covered as f64 / n_total as f64,
        accuracy_on_covered: (n_covered > 0).then(|| n_correct as f64 / n_covered as f64),
    })
}
