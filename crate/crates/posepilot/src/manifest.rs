//! Line-delimited manifest files: one JSON object per record.

use std::collections::BTreeSet;
use std::path::Path;

use posepilot_core::dataset::{ImageRecord, Manifest};

use crate::error::{Error, Result};
use crate::fsutil;

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    parse_manifest(&fsutil::read_to_string(path)?, path)
}

/// Parses and validates manifest text; `path` is only used in messages.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let parsed: Vec<(usize, ImageRecord)> = fsutil::parse_jsonl(text, path)?;
    let mut seen = BTreeSet::new();
    for (line, record) in &parsed {
        let at = |message: String| Error::Parse { path: path.to_path_buf(), line: *line, message };
        record.validate().map_err(|e| at(e.to_string()))?;
        if !seen.insert(record.image_id.as_str()) {
            return Err(at(format!("duplicate image_id `{}`", record.image_id)));
        }
    }
    Ok(Manifest::new(parsed.into_iter().map(|(_, r)| r).collect())?)
}

pub fn manifest_to_jsonl(manifest: &Manifest) -> String {
    fsutil::to_jsonl(manifest.records())
}

pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, manifest_to_jsonl(manifest).as_bytes())
}
