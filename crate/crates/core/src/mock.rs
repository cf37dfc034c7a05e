//! Deterministic stand-ins for encoder outputs.
//!
//! The mock encoder maps input bytes to a 64-bit content hash, seeds a
//! ChaCha stream with it and draws a Gaussian vector that is projected to the
//! unit sphere. The synthetic attribution map is a fixed center-weighted
//! Gaussian kernel.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embedding::Embedding;
use crate::error::Result;
use crate::math;
use crate::saliency::{HeatMap, Normalization};

/// Global seed mixed into every mock stream.
pub const MOCK_SEED: u64 = 0x5EED_CAFE_F00D_D00D;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over `bytes`.
pub fn content_hash(bytes: &[u8]) -> u64 {
    content_hash_parts(&[bytes])
}

/// FNV-1a over the concatenation of `parts`, with each part's length folded
/// in so that `["ab", "c"]` and `["a", "bc"]` differ.
pub fn content_hash_parts(parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for part in parts {
        for &b in (part.len() as u64).to_le_bytes().iter().chain(part.iter()) {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Unit vector of dimension `dim` drawn from the stream keyed by `hash`.
pub fn pseudo_embedding(hash: u64, dim: usize) -> Result<Embedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash ^ MOCK_SEED);
    let mut v = Vec::with_capacity(dim);
    while v.len() < dim {
        // Box-Muller pairs
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let r = math::sqrt(-2.0 * math::ln(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        v.push((r * math::cos(theta)) as f32);
        if v.len() < dim {
            v.push((r * libm::sin(theta)) as f32);
        }
    }
    Embedding::normalized(v)
}

/// Center-weighted Gaussian kernel with standard deviation a quarter of each
/// side, max-normalized to 1.
pub fn center_kernel(width: u32, height: u32) -> HeatMap {
    let (w, h) = (f64::from(width), f64::from(height));
    let (sx, sy) = (w * 0.25, h * 0.25);
    let mut values = Vec::with_capacity(width as usize * height as usize);
    for y in 0..height {
        for x in 0..width {
            let dx = (f64::from(x) + 0.5 - w / 2.0) / sx;
            let dy = (f64::from(y) + 0.5 - h / 2.0) / sy;
            values.push(math::exp(-0.5 * (dx * dx + dy * dy)));
        }
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    for v in values.iter_mut() {
        *v /= max;
    }
    HeatMap::from_parts(width, height, values, Normalization::MaxOne)
        .expect("kernel dimensions are consistent")
}
