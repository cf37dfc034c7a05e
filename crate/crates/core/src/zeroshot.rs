//! Zero-shot scoring: cosine similarity of an image embedding against one
//! embedding per class, temperature softmax, margin and abstention.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::math;

/// Per-image scoring outcome. Abstained records keep their argmax label so
/// coverage/accuracy trade-offs can be computed afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub image_id: String,
    pub similarities: BTreeMap<ClassLabel, f64>,
    pub temperature: f64,
    pub probabilities: BTreeMap<ClassLabel, f64>,
    pub predicted: ClassLabel,
    pub margin: f64,
    pub abstained: bool,
    pub prompt_set_id: String,
}

impl ClassScores {
    /// Similarities over the active classes in canonical order.
    pub fn similarity_vector(&self) -> Vec<f64> {
        self.similarities.values().copied().collect()
    }

    /// Recomputes probabilities, margin-based abstention and keeps the
    /// prediction (temperature never changes the argmax).
    pub fn rescored(&self, temperature: f64, abstain_margin: f64) -> Result<ClassScores> {
        let params = ScoringParams::new(temperature, abstain_margin)?;
        let labels: Vec<ClassLabel> = self.similarities.keys().copied().collect();
        let sims = self.similarity_vector();
        Ok(assemble(&self.image_id, &self.prompt_set_id, &labels, &sims, &params))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub temperature: f64,
    pub abstain_margin: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        Self { temperature: 1.0, abstain_margin: 0.0 }
    }
}

impl ScoringParams {
    pub fn new(temperature: f64, abstain_margin: f64) -> Result<Self> {
        let p = Self { temperature, abstain_margin };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if !(self.abstain_margin >= 0.0) {
            return Err(Error::InvalidInput(alloc::format!(
                "abstain margin must be non-negative, got {}",
                self.abstain_margin
            )));
        }
        Ok(())
    }
}

/// Mean of unit prompt embeddings, re-projected to the unit sphere.
pub fn class_embedding(prompt_embeddings: &[Embedding]) -> Result<Embedding> {
    let first = prompt_embeddings.first().ok_or(Error::EmptyInput("prompt embeddings"))?;
    for e in prompt_embeddings {
        if e.dim() != first.dim() {
            return Err(Error::DimensionMismatch { expected: first.dim(), found: e.dim() });
        }
        e.require_unit()?;
    }
    if prompt_embeddings.len() == 1 {
        return Ok(first.clone());
    }
    let mut sum = alloc::vec![0.0f64; first.dim()];
    for e in prompt_embeddings {
        for (s, &v) in sum.iter_mut().zip(e.as_slice()) {
            *s += f64::from(v);
        }
    }
    let n = prompt_embeddings.len() as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    if math::sqrt(mean.iter().map(|v| v * v).sum()) < 1e-12 {
        return Err(Error::DegenerateEnsemble);
    }
    Embedding::normalized(mean.iter().map(|&v| v as f32).collect()).map_err(|_| Error::DegenerateEnsemble)
}

/// Index of the maximum; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Top-one minus top-two.
pub fn top_two_margin(values: &[f64]) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in values {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    if second == f64::NEG_INFINITY {
        0.0
    } else {
        first - second
    }
}

/// softmax(s / temperature).
pub fn softmax_with_temperature(scores: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    let mut out = alloc::vec![0.0; scores.len()];
    math::softmax_into(&scaled, &mut out);
    out
}

fn assemble(image_id: &str, prompt_set_id: &str, labels: &[ClassLabel], sims: &[f64], params: &ScoringParams) -> ClassScores {
    let probs = softmax_with_temperature(sims, params.temperature);
    let best = argmax(sims).expect("at least two active classes");
    let margin = top_two_margin(sims);
    ClassScores {
        image_id: image_id.to_string(),
        similarities: labels.iter().copied().zip(sims.iter().copied()).collect(),
        temperature: params.temperature,
        probabilities: labels.iter().copied().zip(probs).collect(),
        predicted: labels[best],
        margin,
        abstained: margin < params.abstain_margin,
        prompt_set_id: prompt_set_id.to_string(),
    }
}

/// Scores `image_emb` against the active classes. Similarities are dot
/// products of unit vectors; ties in the argmax go to the lowest canonical
/// class index.
pub fn score(
    image_id: &str,
    image_emb: &Embedding,
    class_embs: &BTreeMap<ClassLabel, Embedding>,
    params: &ScoringParams,
    active_classes: &[ClassLabel],
    prompt_set_id: &str,
) -> Result<ClassScores> {
    params.check()?;
    let mut labels: Vec<ClassLabel> = active_classes.to_vec();
    labels.sort();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::TooFewClasses(labels.len()));
    }
    image_emb.require_unit()?;
    let mut sims = Vec::with_capacity(labels.len());
    for label in &labels {
        let c = class_embs.get(label).ok_or(Error::MissingClass(*label))?;
        c.require_unit()?;
        sims.push(image_emb.dot(c)?);
    }
    Ok(assemble(image_id, prompt_set_id, &labels, &sims, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use ClassLabel::*;

    fn unit(v: Vec<f32>) -> Embedding {
        Embedding::normalized(v).unwrap()
    }

    fn axes() -> BTreeMap<ClassLabel, Embedding> {
        [
            (Sitting, unit(vec![1.0, 0.0, 0.0])),
            (Standing, unit(vec![0.0, 1.0, 0.0])),
            (WalkingRunning, unit(vec![0.0, 0.0, 1.0])),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn singleton_ensemble_is_identity() {
        let e = unit(vec![0.3, -0.2, 0.9]);
        assert_eq!(class_embedding(&[e.clone()]).unwrap(), e);
    }

    #[test]
    fn orthogonal_pair_ensemble() {
        let u = unit(vec![1.0, 0.0]);
        let v = unit(vec![0.0, 1.0]);
        let c = class_embedding(&[u.clone(), v.clone()]).unwrap();
        assert!((c.norm() - 1.0).abs() < 1e-6);
        let inv_sqrt2 = 1.0 / libm::sqrt(2.0);
        assert!((c.dot(&u).unwrap() - inv_sqrt2).abs() < 1e-6);
        assert!((c.dot(&v).unwrap() - inv_sqrt2).abs() < 1e-6);
    }

    #[test]
    fn antipodal_ensemble_is_degenerate() {
        let u = unit(vec![1.0, 0.0]);
        let v = unit(vec![-1.0, 0.0]);
        assert_eq!(class_embedding(&[u, v]), Err(Error::DegenerateEnsemble));
    }

    #[test]
    fn ensemble_rejects_mixed_dimensions() {
        let u = unit(vec![1.0, 0.0]);
        let v = unit(vec![1.0, 0.0, 0.0]);
        assert!(matches!(class_embedding(&[u, v]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn aligned_image_scores_its_class() {
        let img = unit(vec![1.0, 0.0, 0.0]);
        let params = ScoringParams::new(1.0, 1.0).unwrap();
        let s = score("a", &img, &axes(), &params, &ClassLabel::ALL, "t").unwrap();
        assert_eq!(s.similarity_vector(), vec![1.0, 0.0, 0.0]);
        assert_eq!(s.predicted, Sitting);
        assert_eq!(s.margin, 1.0);
        assert!(!s.abstained);
    }

    #[test]
    fn full_tie_breaks_to_sitting_and_abstains() {
        let img = unit(vec![1.0, 1.0, 1.0]);
        let params = ScoringParams::new(1.0, 1e-9).unwrap();
        let s = score("a", &img, &axes(), &params, &ClassLabel::ALL, "t").unwrap();
        assert_eq!(s.predicted, Sitting);
        assert!(s.margin.abs() < 1e-7);
        // float noise in the unit vector can make the sims differ by an ulp;
        // compute on exact values too
        assert_eq!(argmax(&[0.5, 0.5, 0.5]), Some(0));
        assert_eq!(top_two_margin(&[0.5, 0.5, 0.5]), 0.0);
    }

    #[test]
    fn softmax_hand_oracle() {
        // softmax(0.60, 0.56, 0.20) computed by hand
        let e = [libm::exp(0.60), libm::exp(0.56), libm::exp(0.20)];
        let z: f64 = e.iter().sum();
        let p = softmax_with_temperature(&[0.30, 0.28, 0.10], 0.5);
        for i in 0..3 {
            assert!((p[i] - e[i] / z).abs() < 1e-12);
        }
        assert!((top_two_margin(&[0.30, 0.28, 0.10]) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn binary_task_excludes_standing() {
        let img = unit(vec![0.2, 0.9, 0.4]);
        let s = score("a", &img, &axes(), &ScoringParams::default(), &[WalkingRunning, Sitting], "t").unwrap();
        assert_eq!(s.similarities.len(), 2);
        assert_eq!(s.predicted, WalkingRunning);
        assert!(!s.probabilities.contains_key(&Standing));
    }

    #[test]
    fn invalid_parameters() {
        let img = unit(vec![1.0, 0.0, 0.0]);
        assert!(matches!(ScoringParams::new(0.0, 0.0), Err(Error::InvalidTemperature(_))));
        assert!(ScoringParams::new(1.0, -0.1).is_err());
        let bad = ScoringParams { temperature: -1.0, abstain_margin: 0.0 };
        assert!(score("a", &img, &axes(), &bad, &ClassLabel::ALL, "t").is_err());
        assert_eq!(
            score("a", &img, &axes(), &ScoringParams::default(), &[Sitting], "t"),
            Err(Error::TooFewClasses(1))
        );
        let short = unit(vec![1.0, 0.0]);
        assert!(matches!(
            score("a", &short, &axes(), &ScoringParams::default(), &ClassLabel::ALL, "t"),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rescoring_keeps_prediction() {
        let img = unit(vec![0.5, 0.4, 0.1]);
        let s = score("a", &img, &axes(), &ScoringParams::default(), &ClassLabel::ALL, "t").unwrap();
        let r = s.rescored(0.01, 0.0).unwrap();
        assert_eq!(r.predicted, s.predicted);
        assert!(r.probabilities[&Sitting] > s.probabilities[&Sitting]);
    }
}
