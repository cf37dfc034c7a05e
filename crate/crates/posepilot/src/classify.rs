//! Zero-shot classification of manifest records.

use std::collections::BTreeMap;
use std::path::Path;

use posepilot_core::dataset::{ImageRecord, Manifest};
use posepilot_core::prompts::PromptSet;
use posepilot_core::zeroshot::{class_embedding, score, ClassScores, ScoringParams};
use posepilot_core::{ClassLabel, Embedding, Split, Task};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Encoder;
use crate::error::Result;
use crate::fsutil;
use crate::scores::ScoreRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub image_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyOutput {
    /// In manifest order, failed records omitted.
    pub scores: Vec<ScoreRecord>,
    pub failures: Vec<RecordFailure>,
}

/// Records that take part in `task`, optionally restricted to one split.
/// The binary task leaves out records whose truth is standing.
pub fn records_for_task(manifest: &Manifest, task: Task, split: Option<Split>) -> Vec<&ImageRecord> {
    manifest
        .records()
        .iter()
        .filter(|r| task.includes(r.label))
        .filter(|r| split.is_none_or(|s| r.split == s))
        .collect()
}

/// One ensemble embedding per active class. All prompts go to the encoder in
/// a single batch; cached prompts are not re-embedded.
pub fn class_embeddings(encoder: &Encoder, ps: &PromptSet, active: &[ClassLabel]) -> Result<BTreeMap<ClassLabel, Embedding>> {
    ps.validate_structure()?;
    let mut all: Vec<String> = Vec::new();
    for &label in active {
        for p in ps.prompts_for(label) {
            if !all.contains(p) {
                all.push(p.clone());
            }
        }
    }
    let embedded = encoder.text_embeddings(&all)?;
    let lookup = |p: &String| embedded[all.iter().position(|q| q == p).expect("prompt was embedded")].clone();
    let mut out = BTreeMap::new();
    for &label in active {
        let members: Vec<Embedding> = ps.prompts_for(label).iter().map(lookup).collect();
        out.insert(label, class_embedding(&members)?);
    }
    Ok(out)
}

/// Scores every record; unreadable images become failure entries and the
/// run continues. Image embedding runs in parallel, output keeps input order.
pub fn classify_records(
    encoder: &Encoder,
    records: &[&ImageRecord],
    base_dir: &Path,
    ps: &PromptSet,
    params: &ScoringParams,
    task: Task,
) -> Result<ClassifyOutput> {
    let active = task.active_classes();
    let classes = class_embeddings(encoder, ps, active)?;
    let results: Vec<std::result::Result<ScoreRecord, RecordFailure>> = records
        .par_iter()
        .map(|r| {
            let fail = |e: &dyn std::fmt::Display| RecordFailure { image_id: r.image_id.clone(), message: e.to_string() };
            let img = encoder.image_embedding(&fsutil::resolve(base_dir, &r.file_path)).map_err(|e| fail(&e))?;
            let s = score(&r.image_id, &img, &classes, params, active, &ps.set_id).map_err(|e| fail(&e))?;
            Ok(ScoreRecord { scores: s, true_label: Some(r.label) })
        })
        .collect();
    let mut out = ClassifyOutput { scores: Vec::new(), failures: Vec::new() };
    for r in results {
        match r {
            Ok(s) => out.scores.push(s),
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}

/// Scores from precomputed image embeddings (sweeps embed once per backend).
pub fn score_embedded(
    embedded: &[(&ImageRecord, &Embedding)],
    classes: &BTreeMap<ClassLabel, Embedding>,
    ps: &PromptSet,
    params: &ScoringParams,
    task: Task,
) -> Result<Vec<ScoreRecord>> {
    embedded
        .iter()
        .map(|(r, e)| {
            let s = score(&r.image_id, e, classes, params, task.active_classes(), &ps.set_id)?;
            Ok(ScoreRecord { scores: s, true_label: Some(r.label) })
        })
        .collect()
}

pub fn strip_labels(scores: &[ScoreRecord]) -> Vec<ClassScores> {
    scores.iter().map(|s| s.scores.clone()).collect()
}
