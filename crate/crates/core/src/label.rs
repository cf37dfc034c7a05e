//! Closed label set, split tags and task definitions.

use core::fmt;
use core::str::FromStr;

use alloc::string::{String, ToString};
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Posture class. Declaration order is the canonical ordering used for
/// tie-breaking, map iteration and report layout everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Sitting,
    Standing,
    WalkingRunning,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [
        ClassLabel::Sitting,
        ClassLabel::Standing,
        ClassLabel::WalkingRunning,
    ];

    pub const fn index(self) -> usize {
        match self {
            ClassLabel::Sitting => 0,
            ClassLabel::Standing => 1,
            ClassLabel::WalkingRunning => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<ClassLabel> {
        Self::ALL.get(index).copied()
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Sitting => "sitting",
            ClassLabel::Standing => "standing",
            ClassLabel::WalkingRunning => "walking_running",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sitting" => Ok(ClassLabel::Sitting),
            "standing" => Ok(ClassLabel::Standing),
            "walking_running" => Ok(ClassLabel::WalkingRunning),
            other => Err(Error::UnknownLabel(other.to_string())),
        }
    }
}

/// Split assignment of a manifest record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    /// The three assignable splits in allocation order.
    pub const ASSIGNABLE: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub const fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Evaluation task. The binary task is sitting vs walking/running; standing
/// is excluded from both the candidate set and the evaluated records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    Multi,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Binary, Task::Multi];

    pub fn active_classes(self) -> &'static [ClassLabel] {
        match self {
            Task::Binary => &[ClassLabel::Sitting, ClassLabel::WalkingRunning],
            Task::Multi => &ClassLabel::ALL,
        }
    }

    pub fn includes(self, label: ClassLabel) -> bool {
        self.active_classes().contains(&label)
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multi => "multi",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(Task::Binary),
            "multi" => Ok(Task::Multi),
            other => Err(Error::InvalidInput(alloc::format!("unknown task `{other}`"))),
        }
    }
}

pub(crate) fn label_list(labels: &[ClassLabel]) -> String {
    let mut out = String::new();
    for (i, l) in labels.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(l.as_str());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_stable() {
        for (i, l) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(l.index(), i);
            assert_eq!(ClassLabel::from_index(i), Some(*l));
        }
        assert!(ClassLabel::Sitting < ClassLabel::Standing);
        assert!(ClassLabel::Standing < ClassLabel::WalkingRunning);
    }

    #[test]
    fn parse_rejects_unknown_labels() {
        assert_eq!("standing".parse::<ClassLabel>().unwrap(), ClassLabel::Standing);
        assert!(matches!(
            "crouching".parse::<ClassLabel>(),
            Err(Error::UnknownLabel(ref s)) if s == "crouching"
        ));
    }

    #[test]
    fn binary_task_drops_standing() {
        assert!(!Task::Binary.includes(ClassLabel::Standing));
        assert_eq!(Task::Multi.active_classes().len(), 3);
    }
}
