use core::fmt;

use alloc::string::String;

use crate::label::ClassLabel;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    UnknownLabel(String),
    DuplicateImageId(String),
    InvalidRecord { image_id: String, reason: String },
    InvalidFractions(String),
    ClassTooSmall { label: ClassLabel, count: usize },
    DimensionMismatch { expected: usize, found: usize },
    ZeroVector,
    NotNormalized { norm: f64 },
    DegenerateEnsemble,
    InvalidTemperature(f64),
    TooFewClasses(usize),
    EmptyInput(&'static str),
    InvalidInput(String),
    MissingClass(ClassLabel),
    BlankPrompt { label: ClassLabel, index: usize },
    UndefinedStatistics(&'static str),
    BoxOutsideMap,
    NoUsableSamples(ClassLabel),
    Diverged { epoch: usize, loss: f64 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::UnknownLabel(s) => write!(f, "unknown class label `{s}`"),
            Error::DuplicateImageId(id) => write!(f, "duplicate image_id `{id}`"),
            Error::InvalidRecord { image_id, reason } => {
                write!(f, "invalid record `{image_id}`: {reason}")
            }
            Error::InvalidFractions(msg) => write!(f, "invalid split fractions: {msg}"),
            Error::ClassTooSmall { label, count } => write!(
                f,
                "class `{label}` has {count} records; at least 3 are needed to populate train/val/test"
            ),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "embedding dimension mismatch: expected {expected}, found {found}")
            }
            Error::ZeroVector => f.write_str("cannot normalize a zero-length vector"),
            Error::NotNormalized { norm } => write!(f, "embedding is not unit-normalized (norm {norm})"),
            Error::DegenerateEnsemble => {
                f.write_str("prompt ensemble mean is the zero vector (antipodal prompt embeddings)")
            }
            Error::InvalidTemperature(t) => write!(f, "temperature must be positive and finite, got {t}"),
            Error::TooFewClasses(n) => write!(f, "at least 2 active classes are required, got {n}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::InvalidInput(msg) => f.write_str(msg),
            Error::MissingClass(label) => write!(f, "missing entry for class `{label}`"),
            Error::BlankPrompt { label, index } => {
                write!(f, "prompt {index} for class `{label}` is blank")
            }
            Error::UndefinedStatistics(why) => write!(f, "statistics undefined: {why}"),
            Error::BoxOutsideMap => f.write_str("person box does not intersect the heat map"),
            Error::NoUsableSamples(label) => {
                write!(f, "class `{label}` has no usable samples")
            }
            Error::Diverged { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch} (loss {loss})")
            }
        }
    }
}

impl core::error::Error for Error {}
