//! Attribution-map statistics: in-person heat proportion and normalized
//! entropy.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dataset::PersonBox;
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    SumToOne,
    MaxOne,
    Raw,
}

/// Row-major non-negative per-pixel heat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
    normalization: Normalization,
}

impl HeatMap {
    pub fn from_parts(
        width: u32,
        height: u32,
        values: Vec<f64>,
        normalization: Normalization,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("heat map dimensions must be positive".into()));
        }
        if values.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(alloc::format!(
                "heat map has {} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("heat map values must be finite and non-negative".into()));
        }
        Ok(Self { width, height, values, normalization })
    }

    /// Builds a map from raw signed activations, clamping negatives to zero.
    pub fn rectified(width: u32, height: u32, raw: Vec<f64>) -> Result<Self> {
        let values = raw.into_iter().map(|v| if v > 0.0 { v } else { 0.0 }).collect();
        Self::from_parts(width, height, values, Normalization::Raw)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y * self.width + x) as usize]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn sum_normalized(&self) -> Result<HeatMap> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(Error::UndefinedStatistics("heat map carries no mass"));
        }
        let values = self.values.iter().map(|v| v / total).collect();
        Ok(HeatMap { values, normalization: Normalization::SumToOne, ..*self })
    }

    pub fn max_normalized(&self) -> Result<HeatMap> {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::UndefinedStatistics("heat map carries no mass"));
        }
        let values = self.values.iter().map(|v| v / max).collect();
        Ok(HeatMap { values, normalization: Normalization::MaxOne, ..*self })
    }

    /// Bilinear resampling with pixel-center alignment, used to lift a
    /// backend's patch grid to image resolution.
    pub fn upsample_bilinear(&self, width: u32, height: u32) -> Result<HeatMap> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("target dimensions must be positive".into()));
        }
        let sx = f64::from(self.width) / f64::from(width);
        let sy = f64::from(self.height) / f64::from(height);
        let max_x = f64::from(self.width - 1);
        let max_y = f64::from(self.height - 1);
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            let fy = ((f64::from(y) + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = math::floor(fy) as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - f64::from(y0);
            for x in 0..width {
                let fx = ((f64::from(x) + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = math::floor(fx) as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - f64::from(x0);
                let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
                let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
                values.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        HeatMap::from_parts(width, height, values, self.normalization)
    }

    /// 8-bit grayscale rendering, max-normalized.
    pub fn to_gray8(&self) -> Vec<u8> {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        self.values
            .iter()
            .map(|&v| if max > 0.0 { math::rint(v / max * 255.0) as u8 } else { 0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyStats {
    pub in_person_proportion: f64,
    pub normalized_entropy: f64,
    pub person_box: PersonBox,
    pub map_size: (u32, u32),
    /// Set when no person box was available and the full frame stood in.
    #[serde(default)]
    pub full_frame_fallback: bool,
}

/// Whether the pixel at column `x`, row `y` belongs to `rect`: its center
/// must lie in the half-open box.
fn pixel_in_box(x: u32, y: u32, rect: &PersonBox) -> bool {
    let cx = f64::from(x) + 0.5;
    let cy = f64::from(y) + 0.5;
    cx >= rect.x && cx < rect.x + rect.w && cy >= rect.y && cy < rect.y + rect.h
}

/// Share of sum-normalized heat inside `person_box` and the map entropy
/// divided by `ln(W*H)`.
pub fn stats(map: &HeatMap, person_box: &PersonBox) -> Result<SaliencyStats> {
    let (w, h) = (f64::from(map.width), f64::from(map.height));
    let intersects = person_box.w > 0.0
        && person_box.h > 0.0
        && person_box.x < w
        && person_box.y < h
        && person_box.x + person_box.w > 0.0
        && person_box.y + person_box.h > 0.0;
    if !intersects {
        return Err(Error::BoxOutsideMap);
    }
    let p = map.sum_normalized()?;

    let mut inside = 0.0;
    let mut entropy = 0.0;
    for y in 0..map.height {
        for x in 0..map.width {
            let v = p.get(x, y);
            if pixel_in_box(x, y, person_box) {
                inside += v;
            }
            if v > 0.0 {
                entropy -= v * math::ln(v);
            }
        }
    }
    let cells = w * h;
    let normalized_entropy = if cells > 1.0 {
        (entropy / math::ln(cells)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(SaliencyStats {
        in_person_proportion: inside.clamp(0.0, 1.0),
        normalized_entropy,
        person_box: *person_box,
        map_size: (map.width, map.height),
        full_frame_fallback: false,
    })
}

/// `stats` with the whole frame as the person region, flagged as a fallback.
pub fn stats_full_frame(map: &HeatMap) -> Result<SaliencyStats> {
    let frame = PersonBox::new(0.0, 0.0, f64::from(map.width), f64::from(map.height));
    let mut s = stats(map, &frame)?;
    s.full_frame_fallback = true;
    Ok(s)
}
