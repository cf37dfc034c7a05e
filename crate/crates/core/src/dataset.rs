//! Labeled image collections: validation, stratified splitting and
//! exploratory size statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{ClassLabel, Split};
use crate::math;
use crate::posebaseline::KeypointSkeleton;

/// Default model input resolution.
pub const DEFAULT_RESIZE: (u32, u32) = (224, 224);

/// Axis-aligned rectangle in pixel coordinates, serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct PersonBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl PersonBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    fn within(&self, width: f64, height: f64) -> bool {
        let finite = self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite();
        finite
            && self.x >= 0.0
            && self.y >= 0.0
            && self.w >= 0.0
            && self.h >= 0.0
            && self.x + self.w <= width
            && self.y + self.h <= height
    }
}

impl From<[f64; 4]> for PersonBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<PersonBox> for [f64; 4] {
    fn from(b: PersonBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// One line of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub file_path: String,
    pub label: ClassLabel,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_box: Option<PersonBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<KeypointSkeleton>,
    pub width_px: u32,
    pub height_px: u32,
}

impl ImageRecord {
    pub fn new(image_id: &str, file_path: &str, label: ClassLabel, width_px: u32, height_px: u32) -> Self {
        Self {
            image_id: image_id.to_string(),
            file_path: file_path.to_string(),
            label,
            split: Split::Unassigned,
            person_box: None,
            keypoints: None,
            width_px,
            height_px,
        }
    }

    pub fn aspect_ratio(&self) -> f64 {
        f64::from(self.width_px) / f64::from(self.height_px)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidRecord {
            image_id: self.image_id.clone(),
            reason: reason.to_string(),
        };
        if self.image_id.is_empty() {
            return Err(invalid("image_id is empty"));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(invalid("width_px and height_px must be positive"));
        }
        if let Some(b) = &self.person_box {
            if !b.within(f64::from(self.width_px), f64::from(self.height_px)) {
                return Err(invalid("person_box lies outside the image"));
            }
        }
        Ok(())
    }
}

/// Validated, ordered record collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    records: Vec<ImageRecord>,
    class_counts: BTreeMap<ClassLabel, usize>,
    resize_target: (u32, u32),
}

impl Manifest {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateImageId(r.image_id.clone()));
            }
        }
        let mut class_counts: BTreeMap<ClassLabel, usize> =
            ClassLabel::ALL.iter().map(|&l| (l, 0)).collect();
        for r in &records {
            *class_counts.entry(r.label).or_default() += 1;
        }
        Ok(Self { records, class_counts, resize_target: DEFAULT_RESIZE })
    }

    pub fn with_resize_target(mut self, target: (u32, u32)) -> Self {
        self.resize_target = target;
        self
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Counts for every class, zero entries included.
    pub fn class_counts(&self) -> &BTreeMap<ClassLabel, usize> {
        &self.class_counts
    }

    pub fn resize_target(&self) -> (u32, u32) {
        self.resize_target
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn has_all_classes(&self) -> bool {
        self.class_counts.values().all(|&c| c > 0)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Records matching `keep`, preserving order and resize policy.
    pub fn filtered(&self, keep: impl Fn(&ImageRecord) -> bool) -> Manifest {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Manifest::new(records)
            .expect("subset of a valid manifest is valid")
            .with_resize_target(self.resize_target)
    }
}

/// Target train/val/test proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions(pub [f64; 3]);

impl Default for SplitFractions {
    fn default() -> Self {
        Self([0.8, 0.1, 0.1])
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self([train, val, test]);
        f.check()?;
        Ok(f)
    }

    fn check(&self) -> Result<()> {
        if self.0.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidFractions("fractions must be finite and non-negative".into()));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFractions(alloc::format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Largest-remainder allocation of `n` items over the three splits.
/// Remainders within 1e-9 of each other are treated as ties and resolved in
/// train, val, test order.
pub fn split_sizes(n: usize, fractions: SplitFractions) -> [usize; 3] {
    let quotas = fractions.0.map(|f| n as f64 * f);
    let mut sizes = quotas.map(|q| math::floor(q + 1e-9) as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    let rem = |i: usize| quotas[i] - sizes[i] as f64;
    let rems = [rem(0), rem(1), rem(2)];
    order.sort_by(|&a, &b| {
        if (rems[a] - rems[b]).abs() < 1e-9 {
            a.cmp(&b)
        } else {
            rems[b].total_cmp(&rems[a])
        }
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Seeded per-class shuffle followed by largest-remainder allocation.
/// Classes are processed in canonical order from a single seeded stream.
pub fn stratified_split(manifest: &Manifest, fractions: SplitFractions, seed: u64) -> Result<Manifest> {
    fractions.check()?;
    for (&label, &count) in manifest.class_counts() {
        if count < 3 {
            return Err(Error::ClassTooSmall { label, count });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = manifest.records.clone();
    for label in ClassLabel::ALL {
        let mut idx: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let sizes = split_sizes(idx.len(), fractions);
        let mut cursor = 0;
        for (split, size) in Split::ASSIGNABLE.iter().zip(sizes) {
            for &i in &idx[cursor..cursor + size] {
                records[i].split = *split;
            }
            cursor += size;
        }
    }
    Ok(Manifest {
        records,
        class_counts: manifest.class_counts.clone(),
        resize_target: manifest.resize_target,
    })
}

/// Five-number summary with linearly interpolated quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn from_values(values: &[f64]) -> Option<Quartiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let h = (v.len() - 1) as f64 * p;
            let lo = math::floor(h) as usize;
            let hi = (lo + 1).min(v.len() - 1);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Quartiles {
            n: v.len(),
            min: v[0],
            q1: at(0.25),
            median: at(0.5),
            q3: at(0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Square bin of raw image sizes; `width_lo`/`height_lo` are the lower edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBin {
    pub width_lo: u32,
    pub height_lo: u32,
    pub bin_px: u32,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaSummary {
    pub n_images: usize,
    pub size_histogram: Vec<SizeBin>,
    pub aspect_ratio_overall: Option<Quartiles>,
    pub aspect_ratio_by_class: BTreeMap<ClassLabel, Option<Quartiles>>,
}

pub const DEFAULT_SIZE_BIN_PX: u32 = 32;

pub fn eda_stats(manifest: &Manifest) -> EdaSummary {
    eda_stats_with_bin(manifest, DEFAULT_SIZE_BIN_PX)
}

/// Size histogram over `bin_px`-pixel bins (sorted by bin) plus aspect-ratio
/// (width / height) quartiles, overall and per class.
pub fn eda_stats_with_bin(manifest: &Manifest, bin_px: u32) -> EdaSummary {
    let bin_px = bin_px.max(1);
    let mut bins: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for r in manifest.records() {
        let key = (r.width_px / bin_px * bin_px, r.height_px / bin_px * bin_px);
        *bins.entry(key).or_default() += 1;
    }
    let size_histogram = bins
        .into_iter()
        .map(|((width_lo, height_lo), count)| SizeBin { width_lo, height_lo, bin_px, count })
        .collect();
    let all: Vec<f64> = manifest.records().iter().map(ImageRecord::aspect_ratio).collect();
    let aspect_ratio_by_class = ClassLabel::ALL
        .iter()
        .map(|&label| {
            let v: Vec<f64> = manifest
                .records()
                .iter()
                .filter(|r| r.label == label)
                .map(ImageRecord::aspect_ratio)
                .collect();
            (label, Quartiles::from_values(&v))
        })
        .collect();
    EdaSummary {
        n_images: manifest.len(),
        size_histogram,
        aspect_ratio_overall: Quartiles::from_values(&all),
        aspect_ratio_by_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn manifest_with_counts(counts: [usize; 3]) -> Manifest {
        let mut records = Vec::new();
        for (label, &n) in ClassLabel::ALL.iter().zip(counts.iter()) {
            for i in 0..n {
                let id = format!("{label}-{i:03}");
                records.push(ImageRecord::new(&id, &format!("{id}.jpg"), *label, 640, 480));
            }
        }
        Manifest::new(records).unwrap()
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let a = ImageRecord::new("x", "a.jpg", ClassLabel::Sitting, 10, 10);
        let b = ImageRecord::new("x", "b.jpg", ClassLabel::Standing, 10, 10);
        assert_eq!(Manifest::new(vec![a, b]), Err(Error::DuplicateImageId("x".into())));
    }

    #[test]
    fn box_must_lie_inside_image() {
        let mut r = ImageRecord::new("x", "a.jpg", ClassLabel::Sitting, 10, 10);
        r.person_box = Some(PersonBox::new(5.0, 5.0, 6.0, 2.0));
        assert!(matches!(r.validate(), Err(Error::InvalidRecord { .. })));
        r.person_box = Some(PersonBox::new(0.0, 0.0, 10.0, 10.0));
        assert!(r.validate().is_ok());
    }

    #[test]
    fn zero_dimensions_are_rejected() {
        let r = ImageRecord::new("x", "a.jpg", ClassLabel::Sitting, 0, 10);
        assert!(r.validate().is_err());
    }

    #[test]
    fn class_counts_include_every_class() {
        let m = manifest_with_counts([1, 1, 1]);
        assert_eq!(m.class_counts().values().copied().collect::<Vec<_>>(), vec![1, 1, 1]);
        assert!(m.has_all_classes());
    }

    fn brute_force_largest_remainder(n: usize, f: [f64; 3]) -> [usize; 3] {
        // enumerate every allocation summing to n, keep those within one of
        // each quota and pick the one whose rounded-up splits have the
        // largest remainders; descending enumeration makes ties favor
        // earlier splits
        let mut best: Option<([usize; 3], [f64; 3])> = None;
        for a in (0..=n).rev() {
            for b in (0..=(n - a)).rev() {
                let c = n - a - b;
                let alloc = [a, b, c];
                let ok = (0..3).all(|i| {
                    let q = n as f64 * f[i];
                    let fl = libm::floor(q + 1e-9) as usize;
                    alloc[i] == fl || alloc[i] == fl + 1
                });
                if !ok {
                    continue;
                }
                let score = [0, 1, 2].map(|i| {
                    let q = n as f64 * f[i];
                    let fl = libm::floor(q + 1e-9);
                    if alloc[i] as f64 > fl { q - fl } else { -(q - fl) }
                });
                let better = match &best {
                    None => true,
                    Some((_, s)) => {
                        let total: f64 = score.iter().sum();
                        let prev: f64 = s.iter().sum();
                        total > prev + 1e-9
                    }
                };
                if better {
                    best = Some((alloc, score));
                }
            }
        }
        best.unwrap().0
    }

    #[test]
    fn split_sizes_follow_largest_remainder() {
        let f = SplitFractions::default();
        assert_eq!(split_sizes(95, f), [76, 10, 9]);
        assert_eq!(split_sizes(92, f), [74, 9, 9]);
        assert_eq!(split_sizes(98, f), [78, 10, 10]);
        assert_eq!(split_sizes(10, f), [8, 1, 1]);
        for n in 3..120 {
            assert_eq!(split_sizes(n, f), brute_force_largest_remainder(n, f.0), "n = {n}");
        }
    }

    #[test]
    fn paper_counts_split_deterministically() {
        let m = manifest_with_counts([95, 92, 98]);
        let a = stratified_split(&m, SplitFractions::default(), 42).unwrap();
        let b = stratified_split(&m, SplitFractions::default(), 42).unwrap();
        assert_eq!(a, b);
        let count = |label, split| a.records().iter().filter(|r| r.label == label && r.split == split).count();
        assert_eq!(count(ClassLabel::Sitting, Split::Train), 76);
        assert_eq!(count(ClassLabel::Sitting, Split::Val), 10);
        assert_eq!(count(ClassLabel::Sitting, Split::Test), 9);
        assert!(a.records().iter().all(|r| r.split != Split::Unassigned));
    }

    #[test]
    fn different_seeds_shuffle_differently() {
        let m = manifest_with_counts([20, 20, 20]);
        let a = stratified_split(&m, SplitFractions::default(), 1).unwrap();
        let b = stratified_split(&m, SplitFractions::default(), 2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn small_class_is_an_error() {
        let m = manifest_with_counts([10, 2, 10]);
        assert_eq!(
            stratified_split(&m, SplitFractions::default(), 0),
            Err(Error::ClassTooSmall { label: ClassLabel::Standing, count: 2 })
        );
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(SplitFractions::new(0.8, 0.1, 0.2).is_err());
        assert!(SplitFractions::new(0.7, 0.2, 0.1).is_ok());
    }

    #[test]
    fn constant_sizes_give_single_bin() {
        let m = manifest_with_counts([3, 3, 3]);
        let eda = eda_stats(&m);
        assert_eq!(eda.size_histogram.len(), 1);
        assert_eq!(eda.size_histogram[0].count, 9);
        let q = eda.aspect_ratio_overall.unwrap();
        assert_eq!(q.median, 640.0 / 480.0);
        assert_eq!(q.min, q.max);
    }

    #[test]
    fn two_point_median() {
        let recs = vec![
            ImageRecord::new("a", "a", ClassLabel::Sitting, 100, 100),
            ImageRecord::new("b", "b", ClassLabel::Sitting, 200, 100),
        ];
        let eda = eda_stats(&Manifest::new(recs).unwrap());
        let q = eda.aspect_ratio_by_class[&ClassLabel::Sitting].unwrap();
        assert_eq!(q.median, 1.5);
        assert!(eda.aspect_ratio_by_class[&ClassLabel::Standing].is_none());
    }
}
