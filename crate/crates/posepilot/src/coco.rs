//! Builds a manifest from COCO person annotations plus posture labels.
//!
//! COCO carries no posture labels, so each image's class comes either from
//! the class subdirectory it sits in under the images root
//! (`sitting/`, `standing/`, `walking_running/`) or from a two-column
//! `file_name,label` CSV. Unlabeled images are skipped and reported.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use posepilot_core::dataset::{ImageRecord, Manifest, PersonBox};
use posepilot_core::posebaseline::{KeypointSkeleton, NUM_KEYPOINTS};
use posepilot_core::ClassLabel;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

const PERSON_CATEGORY: u64 = 1;

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    #[serde(default = "person")]
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    keypoints: Vec<f64>,
    #[serde(default)]
    iscrowd: u8,
}

fn person() -> u64 {
    PERSON_CATEGORY
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedImage {
    pub file_name: String,
    pub reason: String,
}

#[derive(Debug)]
pub struct IngestReport {
    pub manifest: Manifest,
    pub skipped: Vec<SkippedImage>,
}

/// Where posture labels come from.
pub enum LabelSource<'a> {
    /// Class subdirectories below the images root.
    Subdirectories,
    /// `file_name,label` rows; a header row is allowed.
    Csv(&'a Path),
}

fn read_label_csv(path: &Path) -> Result<HashMap<String, ClassLabel>> {
    let text = fsutil::read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (file, label) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected `file_name,label`".into(),
        })?;
        let (file, label) = (file.trim(), label.trim());
        if i == 0 && file == "file_name" {
            continue;
        }
        let label: ClassLabel = label.parse().map_err(|e: posepilot_core::Error| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.insert(file.to_string(), label);
    }
    Ok(out)
}

/// `file_name -> (label, path relative to images_dir)` from class folders.
fn scan_subdirectories(images_dir: &Path) -> Result<HashMap<String, (ClassLabel, String)>> {
    let mut out = HashMap::new();
    for label in ClassLabel::ALL {
        let dir = images_dir.join(label.as_str());
        if !dir.is_dir() {
            continue;
        }
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            if entry.path().is_file() {
                let name = entry.file_name().to_string_lossy().into_owned();
                out.insert(name.clone(), (label, format!("{}/{name}", label.as_str())));
            }
        }
    }
    Ok(out)
}

/// COCO visibility flag (0, 1, 2) mapped to a confidence in [0, 1].
fn visibility_confidence(v: f64) -> f64 {
    (v / 2.0).clamp(0.0, 1.0)
}

fn skeleton_from_coco(values: &[f64]) -> Option<KeypointSkeleton> {
    if values.len() != NUM_KEYPOINTS * 3 {
        return None;
    }
    let flat: Vec<f64> = values
        .chunks_exact(3)
        .flat_map(|c| [c[0], c[1], visibility_confidence(c[2])])
        .collect();
    KeypointSkeleton::from_flat(&flat).ok()
}

/// Clamps a COCO box (which may overhang by rounding) into the image.
fn clamp_box(b: [f64; 4], width: u32, height: u32) -> PersonBox {
    let (w, h) = (f64::from(width), f64::from(height));
    let x0 = b[0].clamp(0.0, w);
    let y0 = b[1].clamp(0.0, h);
    let x1 = (b[0] + b[2]).clamp(0.0, w);
    let y1 = (b[1] + b[3]).clamp(0.0, h);
    PersonBox::new(x0, y0, x1 - x0, y1 - y0)
}

fn image_id_for(file_name: &str) -> String {
    Path::new(file_name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| file_name.to_string())
}

/// Reads the annotation file and emits one record per labeled image that has
/// at least one non-crowd person; the largest person box is kept. Manifest
/// file paths are the image's location under `images_dir`, prefixed with
/// `recorded_root` (usually `images_dir` relative to the manifest file).
pub fn ingest_coco(
    annotations: &Path,
    images_dir: &Path,
    recorded_root: &Path,
    labels: LabelSource<'_>,
) -> Result<IngestReport> {
    let text = fsutil::read_to_string(annotations)?;
    let coco: CocoFile = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: annotations.to_path_buf(),
        message: e.to_string(),
    })?;

    let mut best: BTreeMap<u64, &CocoAnnotation> = BTreeMap::new();
    for a in &coco.annotations {
        if a.category_id != PERSON_CATEGORY || a.iscrowd != 0 {
            continue;
        }
        let area = a.bbox[2] * a.bbox[3];
        match best.get(&a.image_id) {
            Some(prev) if prev.bbox[2] * prev.bbox[3] >= area => {}
            _ => {
                best.insert(a.image_id, a);
            }
        }
    }

    let (csv, dirs) = match labels {
        LabelSource::Csv(p) => (Some(read_label_csv(p)?), None),
        LabelSource::Subdirectories => (None, Some(scan_subdirectories(images_dir)?)),
    };

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut images: Vec<&CocoImage> = coco.images.iter().collect();
    images.sort_by(|a, b| a.file_name.cmp(&b.file_name));
    for img in images {
        let base = Path::new(&img.file_name).file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let located = match (&csv, &dirs) {
            (Some(map), _) => map.get(&img.file_name).or_else(|| map.get(&base)).map(|&l| (l, img.file_name.clone())),
            (_, Some(map)) => map.get(&base).cloned(),
            _ => None,
        };
        let Some((label, rel)) = located else {
            skipped.push(SkippedImage { file_name: img.file_name.clone(), reason: "no posture label".into() });
            continue;
        };
        let Some(ann) = best.get(&img.id) else {
            skipped.push(SkippedImage { file_name: img.file_name.clone(), reason: "no visible person".into() });
            continue;
        };
        let path = recorded_root.join(&rel);
        let mut record = ImageRecord::new(
            &image_id_for(&img.file_name),
            &path.to_string_lossy(),
            label,
            img.width,
            img.height,
        );
        record.person_box = Some(clamp_box(ann.bbox, img.width, img.height));
        record.keypoints = skeleton_from_coco(&ann.keypoints);
        records.push(record);
    }
    Ok(IngestReport { manifest: Manifest::new(records)?, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn visibility_maps_to_confidence() {
        assert_eq!(visibility_confidence(0.0), 0.0);
        assert_eq!(visibility_confidence(1.0), 0.5);
        assert_eq!(visibility_confidence(2.0), 1.0);
    }

    #[test]
    fn overhanging_box_is_clamped() {
        let b = clamp_box([-1.0, 10.0, 50.0, 500.0], 40, 100);
        assert_eq!(b, PersonBox::new(0.0, 10.0, 40.0, 90.0));
    }

    #[test]
    fn ids_are_file_stems() {
        assert_eq!(image_id_for("000000123.jpg"), "000000123");
    }
}
