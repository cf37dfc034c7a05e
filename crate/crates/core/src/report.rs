//! Number formatting and run aggregation for report tables.

use alloc::string::String;
use serde::{Deserialize, Serialize};

use crate::math;

/// Two-decimal fixed point with ties rounded to even (`0.125 -> "0.12"`).
pub fn fixed2(x: f64) -> String {
    if !x.is_finite() {
        return alloc::format!("{x}");
    }
    let scaled = math::rint(x * 100.0);
    let v = scaled / 100.0;
    // avoid "-0.00"
    let v = if v == 0.0 { 0.0 } else { v };
    alloc::format!("{v:.2}")
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        if values.iter().all(|&v| v == values[0]) {
            // exact, so repeated identical runs report sd = 0
            return Some(MeanSd { mean: values[0], sd: 0.0, n });
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
        } else {
            0.0
        };
        Some(MeanSd { mean, sd, n })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_to_even() {
        assert_eq!(fixed2(0.125), "0.12");
        assert_eq!(fixed2(0.375), "0.38");
        assert_eq!(fixed2(0.74), "0.74");
        assert_eq!(fixed2(0.7391), "0.74");
        assert_eq!(fixed2(1.0), "1.00");
        assert_eq!(fixed2(-0.001), "0.00");
    }

    #[test]
    fn identical_runs_have_zero_sd() {
        let m = MeanSd::of(&[0.5, 0.5, 0.5]).unwrap();
        let tenth = MeanSd::of(&[0.1, 0.1, 0.1]).unwrap();
        assert_eq!((tenth.mean, tenth.sd), (0.1, 0.0));
        assert_eq!(m.mean, 0.5);
        assert_eq!(m.sd, 0.0);
        assert!(MeanSd::of(&[]).is_none());
        assert!((MeanSd::of(&[1.0, 3.0]).unwrap().sd - libm::sqrt(2.0)).abs() < 1e-15);
    }
}
