//! Embedding vectors shared by image and text encoders.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Tolerance on the L2 norm of a vector flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// An encoder output. Stored as `f32` (what encoders emit and what the disk
/// cache holds); all arithmetic on it accumulates in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    vector: Vec<f32>,
    normalized: bool,
}

impl Embedding {
    /// Wraps a raw vector without normalizing it.
    pub fn raw(vector: Vec<f32>) -> Self {
        Self { vector, normalized: false }
    }

    /// Projects `vector` onto the unit sphere.
    pub fn normalized(vector: Vec<f32>) -> Result<Self> {
        let mut vector = vector;
        let norm = l2_norm(&vector);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroVector);
        }
        for v in vector.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
        Ok(Self { vector, normalized: true })
    }

    /// Accepts a vector that is already unit length, failing if it is not.
    pub fn from_unit(vector: Vec<f32>) -> Result<Self> {
        let norm = l2_norm(&vector);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self { vector, normalized: true })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.vector
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.vector)
    }

    /// Dot product; equals cosine similarity when both sides are normalized.
    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        Ok(self
            .vector
            .iter()
            .zip(&other.vector)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum())
    }

    pub(crate) fn require_unit(&self) -> Result<()> {
        let norm = self.norm();
        if !self.normalized || (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { norm });
        }
        Ok(())
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    math::sqrt(v.iter().map(|&x| f64::from(x) * f64::from(x)).sum())
}
