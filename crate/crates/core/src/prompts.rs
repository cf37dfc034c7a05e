//! Per-class prompt sets, the three built-in specificity tiers and the
//! advisory scene/clothing/identity lint.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::ClassLabel;

/// One tier's wording for every class. The exact strings are the
/// experimental variable and are never normalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSet {
    pub set_id: String,
    /// 1-3 for the built-in tiers, 0 for user-defined sets.
    pub tier: u8,
    #[serde(default)]
    pub description: String,
    /// Store revision; bumped on every accepted write.
    #[serde(default)]
    pub revision: u64,
    pub prompts: BTreeMap<ClassLabel, Vec<String>>,
}

impl PromptSet {
    pub fn new(set_id: &str, tier: u8, description: &str, prompts: BTreeMap<ClassLabel, Vec<String>>) -> Result<Self> {
        let set = Self { set_id: set_id.to_string(), tier, description: description.to_string(), revision: 0, prompts };
        set.validate_structure()?;
        Ok(set)
    }

    /// Hard checks: every class present with at least one non-blank prompt.
    pub fn validate_structure(&self) -> Result<()> {
        if self.set_id.trim().is_empty() {
            return Err(Error::InvalidInput("set_id is blank".into()));
        }
        if self.tier > 3 {
            return Err(Error::InvalidInput(alloc::format!("tier must be 0-3, got {}", self.tier)));
        }
        for label in ClassLabel::ALL {
            let list = self.prompts.get(&label).ok_or(Error::MissingClass(label))?;
            if list.is_empty() {
                return Err(Error::MissingClass(label));
            }
            if let Some(index) = list.iter().position(|p| p.trim().is_empty()) {
                return Err(Error::BlankPrompt { label, index });
            }
        }
        Ok(())
    }

    pub fn prompts_for(&self, label: ClassLabel) -> &[String] {
        self.prompts.get(&label).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Distinct prompt strings in class order, first occurrence kept.
    pub fn unique_prompts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for list in self.prompts.values() {
            for p in list {
                if !out.contains(&p.as_str()) {
                    out.push(p);
                }
            }
        }
        out
    }
}

fn single(prompts: [(ClassLabel, &str); 3]) -> BTreeMap<ClassLabel, Vec<String>> {
    prompts.into_iter().map(|(l, p)| (l, alloc::vec![p.to_string()])).collect()
}

/// Stand-in for the unpublished tier-3 walking/running phrase.
pub const TIER3_WALKING_PLACEHOLDER: &str = "one knee raised and legs scissored mid-stride";

/// The three built-in tiers: label template, action cue, body geometry.
pub fn builtin_tiers() -> Vec<PromptSet> {
    use ClassLabel::*;
    let tier = |id: &str, tier: u8, description: &str, prompts| PromptSet {
        set_id: id.to_string(),
        tier,
        description: description.to_string(),
        revision: 0,
        prompts,
    };
    alloc::vec![
        tier(
            "tier1",
            1,
            "Tier 1: class label in a minimal photo template",
            single([
                (Sitting, "a photo of a person sitting"),
                (Standing, "a photo of a person standing"),
                (WalkingRunning, "a photo of a person walking or running"),
            ]),
        ),
        tier(
            "tier2",
            2,
            "Tier 2: short action cue per class",
            single([
                (Sitting, "a person seated on a chair"),
                (Standing, "a person standing still and upright"),
                (WalkingRunning, "a person mid-stride with one foot off the ground"),
            ]),
        ),
        tier(
            "tier3",
            3,
            "Tier 3: anatomical pose constraints. The walking_running phrase is a \
             placeholder, not taken from the published tier wording.",
            single([
                (Sitting, "hips and knees bent at right angles"),
                (Standing, "legs straight and torso vertical"),
                (WalkingRunning, TIER3_WALKING_PLACEHOLDER),
            ]),
        ),
    ]
}

pub fn builtin(set_id: &str) -> Option<PromptSet> {
    builtin_tiers().into_iter().find(|s| s.set_id == set_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintFinding {
    pub term: String,
    pub category: String,
    pub class: ClassLabel,
    pub prompt_index: usize,
    pub severity: Severity,
}

/// Categorized terms; each term is a sequence of lowercase words.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StopList {
    entries: Vec<(String, Vec<String>)>,
}

pub const DEFAULT_STOPLIST: &str = include_str!("../assets/stoplist.txt");

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

impl StopList {
    /// Parses `[category]` headers followed by one term per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut category: Option<String> = None;
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                category = Some(name.trim().to_string());
                continue;
            }
            let cat = category
                .clone()
                .ok_or_else(|| Error::InvalidInput(alloc::format!("stop-list line {}: term before any [category]", n + 1)))?;
            let term = words(line);
            if !term.is_empty() {
                entries.push((cat, term));
            }
        }
        Ok(Self { entries })
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_STOPLIST).expect("bundled stop-list parses")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn hits<'a>(&'a self, tokens: &'a [String]) -> impl Iterator<Item = (&'a str, String)> + 'a {
        self.entries.iter().filter_map(move |(cat, term)| {
            let found = tokens.windows(term.len()).any(|w| w == term.as_slice());
            found.then(|| (cat.as_str(), term.join(" ")))
        })
    }
}

/// Structural problems are errors; stop-list hits are returned as warnings.
/// The set is never modified.
pub fn validate_prompt_set(ps: &PromptSet, stoplist: &StopList) -> Result<Vec<LintFinding>> {
    ps.validate_structure()?;
    let mut findings = Vec::new();
    for (&class, list) in &ps.prompts {
        for (prompt_index, prompt) in list.iter().enumerate() {
            let tokens = words(prompt);
            for (category, term) in stoplist.hits(&tokens) {
                findings.push(LintFinding {
                    term,
                    category: category.to_string(),
                    class,
                    prompt_index,
                    severity: Severity::Warning,
                });
            }
        }
    }
    Ok(findings)
}
