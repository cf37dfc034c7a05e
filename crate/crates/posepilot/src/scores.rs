//! Score files: one `ClassScores` object per line, optionally with the
//! record's true label so calibration can run without the manifest.

use std::path::Path;

use posepilot_core::zeroshot::ClassScores;
use posepilot_core::ClassLabel;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    #[serde(flatten)]
    pub scores: ClassScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<ClassLabel>,
}

pub fn scores_to_jsonl(records: &[ScoreRecord]) -> String {
    fsutil::to_jsonl(records)
}

pub fn save_scores(records: &[ScoreRecord], path: &Path) -> Result<()> {
    fsutil::write_atomic(path, scores_to_jsonl(records).as_bytes())
}

pub fn parse_scores(text: &str, path: &Path) -> Result<Vec<ScoreRecord>> {
    Ok(fsutil::parse_jsonl(text, path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    parse_scores(&fsutil::read_to_string(path)?, path)
}
