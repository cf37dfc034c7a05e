//! Temperature scaling and calibration error.
//!
//! One temperature is fitted by minimizing the mean negative log-likelihood
//! of `softmax(s / τ)` with golden-section search on `ln τ`. The NLL is
//! convex in `1/τ`, so it is unimodal in `ln τ` and the search is exact up to
//! its tolerance.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::zeroshot::{argmax, softmax_with_temperature};

pub const MIN_TEMPERATURE: f64 = 1e-3;
pub const MAX_TEMPERATURE: f64 = 1e3;
/// Stopping width of the search interval in `ln τ`, i.e. relative tolerance on τ.
pub const LOG_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_BINS: usize = 10;

/// Similarities over the active classes and the index of the true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub similarities: Vec<f64>,
    pub label: usize,
}

impl CalibrationSample {
    pub fn new(similarities: Vec<f64>, label: usize) -> Self {
        Self { similarities, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub confidence_lo: f64,
    pub confidence_hi: f64,
    pub mean_confidence: f64,
    pub empirical_accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub temperature: f64,
    pub validation_nll: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    /// Reliability bins at the fitted temperature.
    pub bins: Vec<ReliabilityBin>,
    /// Likelihood does not depend on τ (every sample has equal scores);
    /// temperature was left at 1.
    pub flat_likelihood: bool,
}

fn check_samples(samples: &[CalibrationSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("calibration samples"));
    }
    for s in samples {
        if s.similarities.len() < 2 {
            return Err(Error::TooFewClasses(s.similarities.len()));
        }
        if s.label >= s.similarities.len() {
            return Err(Error::InvalidInput(alloc::format!(
                "label index {} out of range for {} classes",
                s.label,
                s.similarities.len()
            )));
        }
        if s.similarities.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("similarities must be finite".into()));
        }
    }
    let first = samples[0].label;
    if samples.iter().all(|s| s.label == first) {
        return Err(Error::InvalidInput("calibration needs at least two distinct labels".into()));
    }
    Ok(())
}

/// Mean of `logsumexp(s/τ) - s_y/τ`.
pub fn mean_nll(samples: &[CalibrationSample], temperature: f64) -> f64 {
    let mut total = 0.0;
    let mut scaled = Vec::new();
    for s in samples {
        scaled.clear();
        scaled.extend(s.similarities.iter().map(|v| v / temperature));
        total += math::log_sum_exp(&scaled) - scaled[s.label];
    }
    total / samples.len() as f64
}

/// `(max probability, argmax == label)` per sample at `temperature`.
pub fn confidences(samples: &[CalibrationSample], temperature: f64) -> Vec<(f64, bool)> {
    samples
        .iter()
        .map(|s| {
            let p = softmax_with_temperature(&s.similarities, temperature);
            let best = argmax(&s.similarities).unwrap_or(0);
            (p[best], best == s.label)
        })
        .collect()
}

fn bin_index(confidence: f64, n_bins: usize) -> usize {
    let b = math::floor(confidence * n_bins as f64);
    if b < 0.0 {
        0
    } else {
        (b as usize).min(n_bins - 1)
    }
}

fn check_predictions(predictions: &[(f64, bool)], n_bins: usize) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::EmptyInput("predictions"));
    }
    if n_bins == 0 {
        return Err(Error::InvalidInput("at least one bin is required".into()));
    }
    if predictions.iter().any(|(c, _)| !(0.0..=1.0).contains(c)) {
        return Err(Error::InvalidInput("confidences must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Equal-width bins over [0, 1]; the last bin is closed on the right.
pub fn reliability_bins(predictions: &[(f64, bool)], n_bins: usize) -> Result<Vec<ReliabilityBin>> {
    check_predictions(predictions, n_bins)?;
    let mut conf_sum = alloc::vec![0.0; n_bins];
    let mut correct = alloc::vec![0usize; n_bins];
    let mut count = alloc::vec![0usize; n_bins];
    for &(c, ok) in predictions {
        let b = bin_index(c, n_bins);
        conf_sum[b] += c;
        correct[b] += usize::from(ok);
        count[b] += 1;
    }
    Ok((0..n_bins)
        .map(|b| {
            let n = count[b];
            ReliabilityBin {
                confidence_lo: b as f64 / n_bins as f64,
                confidence_hi: (b + 1) as f64 / n_bins as f64,
                mean_confidence: if n > 0 { conf_sum[b] / n as f64 } else { 0.0 },
                empirical_accuracy: if n > 0 { correct[b] as f64 / n as f64 } else { 0.0 },
                count: n,
            }
        })
        .collect())
}

/// `Σ_b (n_b / N) |acc_b - conf_b|`, evaluated as `Σ_b |correct_b - Σconf_b| / N`.
pub fn expected_calibration_error(predictions: &[(f64, bool)], n_bins: usize) -> Result<f64> {
    check_predictions(predictions, n_bins)?;
    let mut conf_sum = alloc::vec![0.0; n_bins];
    let mut correct = alloc::vec![0.0; n_bins];
    for &(c, ok) in predictions {
        let b = bin_index(c, n_bins);
        conf_sum[b] += c;
        if ok {
            correct[b] += 1.0;
        }
    }
    let gap: f64 = conf_sum.iter().zip(&correct).map(|(c, k)| (k - c).abs()).sum();
    Ok((gap / predictions.len() as f64).clamp(0.0, 1.0))
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (math::sqrt(5.0) - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

pub fn fit_temperature(samples: &[CalibrationSample]) -> Result<CalibrationResult> {
    fit_temperature_with_bins(samples, DEFAULT_BINS)
}

pub fn fit_temperature_with_bins(samples: &[CalibrationSample], n_bins: usize) -> Result<CalibrationResult> {
    check_samples(samples)?;
    let flat = samples
        .iter()
        .all(|s| s.similarities.iter().all(|&v| v == s.similarities[0]));
    let temperature = if flat {
        1.0
    } else {
        let log_t = golden_section(
            |u| mean_nll(samples, math::exp(u)),
            math::ln(MIN_TEMPERATURE),
            math::ln(MAX_TEMPERATURE),
            LOG_TOLERANCE,
        );
        math::exp(log_t).clamp(MIN_TEMPERATURE, MAX_TEMPERATURE)
    };
    let before = confidences(samples, 1.0);
    let after = confidences(samples, temperature);
    Ok(CalibrationResult {
        temperature,
        validation_nll: mean_nll(samples, temperature),
        ece_before: expected_calibration_error(&before, n_bins)?,
        ece_after: expected_calibration_error(&after, n_bins)?,
        bins: reliability_bins(&after, n_bins)?,
        flat_likelihood: flat,
    })
}
