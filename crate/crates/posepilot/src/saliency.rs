//! Attribution statistics per prompt and 8-bit overlay export.

use std::path::{Path, PathBuf};

use image::GrayImage;
use posepilot_core::dataset::{ImageRecord, PersonBox};
use posepilot_core::prompts::PromptSet;
use posepilot_core::saliency::{stats, stats_full_frame, HeatMap, SaliencyStats};
use posepilot_core::ClassLabel;
use serde::{Deserialize, Serialize};

use crate::backend::Encoder;
use crate::error::{Error, Result};
use crate::fsutil;

/// Statistics for one prompt on one image. `overlay` is the file name of the
/// exported raster, relative to the overlay directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyEntry {
    pub image_id: String,
    pub prompt_set_id: String,
    pub class: ClassLabel,
    pub prompt_index: usize,
    pub prompt: String,
    pub stats: SaliencyStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay: Option<String>,
}

/// Which classes' prompts to attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSelection {
    Truth,
    All,
    One(ClassLabel),
}

impl std::str::FromStr for ClassSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" => Ok(Self::Truth),
            "all" => Ok(Self::All),
            other => Ok(Self::One(other.parse()?)),
        }
    }
}

impl ClassSelection {
    fn classes(self, truth: ClassLabel) -> Vec<ClassLabel> {
        match self {
            Self::Truth => vec![truth],
            Self::All => ClassLabel::ALL.to_vec(),
            Self::One(l) => vec![l],
        }
    }
}

fn stats_for(map: &HeatMap, person_box: Option<&PersonBox>) -> Result<SaliencyStats> {
    Ok(match person_box {
        Some(b) => stats(map, b)?,
        None => stats_full_frame(map)?,
    })
}

/// One stats record per prompt, in prompt order. Without a person box the
/// full frame is used and flagged.
pub fn compare_across_prompts(
    encoder: &Encoder,
    image: &Path,
    prompts: &[String],
    person_box: Option<&PersonBox>,
) -> Result<Vec<SaliencyStats>> {
    prompts.iter().map(|p| stats_for(&encoder.attribute(image, p)?, person_box)).collect()
}

fn safe_component(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect()
}

pub fn overlay_name(image_id: &str, set_id: &str, class: ClassLabel, index: usize) -> String {
    format!("{}__{}__{}__{index}.pgm", safe_component(image_id), safe_component(set_id), class.as_str())
}

pub fn write_overlay(map: &HeatMap, path: &Path) -> Result<()> {
    let img = GrayImage::from_raw(map.width(), map.height(), map.to_gray8()).expect("raster matches map size");
    let mut bytes = std::io::Cursor::new(Vec::new());
    img.write_to(&mut bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })?;
    fsutil::write_atomic(path, bytes.get_ref())
}

/// Attributes every selected prompt of `ps` on one record, writing overlays
/// into `overlay_dir` when given.
pub fn record_saliency(
    encoder: &Encoder,
    record: &ImageRecord,
    base_dir: &Path,
    ps: &PromptSet,
    selection: ClassSelection,
    overlay_dir: Option<&Path>,
) -> Result<Vec<SaliencyEntry>> {
    let path = fsutil::resolve(base_dir, &record.file_path);
    let mut out = Vec::new();
    for class in selection.classes(record.label) {
        for (i, prompt) in ps.prompts_for(class).iter().enumerate() {
            let map = encoder.attribute(&path, prompt)?;
            let overlay = match overlay_dir {
                Some(dir) => {
                    let name = overlay_name(&record.image_id, &ps.set_id, class, i);
                    write_overlay(&map, &dir.join(&name))?;
                    Some(name)
                }
                None => None,
            };
            out.push(SaliencyEntry {
                image_id: record.image_id.clone(),
                prompt_set_id: ps.set_id.clone(),
                class,
                prompt_index: i,
                prompt: prompt.clone(),
                stats: stats_for(&map, record.person_box.as_ref())?,
                overlay,
            });
        }
    }
    Ok(out)
}

pub fn overlay_path(dir: &Path, name: &str) -> Option<PathBuf> {
    (!name.is_empty() && safe_component(name) == name && !name.starts_with('.')).then(|| dir.join(name))
}
