//! Synthetic COCO-style dataset: PNGs in class folders plus an annotation
//! file whose keypoints follow each class's canonical geometry.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use serde_json::{json, Value};

pub const CLASSES: [&str; 3] = ["sitting", "standing", "walking_running"];
pub const PAPER_COUNTS: [usize; 3] = [95, 92, 98];
pub const IMAGE_SIZE: (u32, u32) = (64, 48);

pub struct Dataset {
    pub root: PathBuf,
    pub images_dir: PathBuf,
    pub coco: PathBuf,
    pub n_images: usize,
}

fn jitter(seed: usize, k: usize) -> f64 {
    let mut h = (seed as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 31;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 29;
    (h % 2001) as f64 / 1000.0 - 1.0
}

/// 17 COCO keypoints as (x, y) for a figure centered at x = 32.
fn skeleton(class: usize, seed: usize) -> Vec<(f64, f64)> {
    let mut p = vec![(32.0, 5.0); 17];
    p[1] = (31.0, 4.0);
    p[2] = (33.0, 4.0);
    p[3] = (30.0, 5.0);
    p[4] = (34.0, 5.0);
    p[5] = (28.0, 10.0);
    p[6] = (36.0, 10.0);
    p[7] = (27.0, 17.0);
    p[8] = (37.0, 17.0);
    p[9] = (27.0, 23.0);
    p[10] = (37.0, 23.0);
    p[11] = (29.0, 24.0);
    p[12] = (35.0, 24.0);
    match class {
        0 => {
            p[13] = (39.0, 24.0);
            p[14] = (45.0, 24.0);
            p[15] = (39.0, 34.0);
            p[16] = (45.0, 34.0);
        }
        1 => {
            p[13] = (30.0, 34.0);
            p[14] = (34.0, 34.0);
            p[15] = (31.0, 44.0);
            p[16] = (33.0, 44.0);
        }
        _ => {
            p[13] = (33.0, 34.0);
            p[14] = (31.0, 34.0);
            p[15] = (38.0, 44.0);
            p[16] = (26.0, 44.0);
        }
    }
    p.iter().enumerate().map(|(k, &(x, y))| (x + 0.6 * jitter(seed, 2 * k), y + 0.6 * jitter(seed, 2 * k + 1))).collect()
}

fn image(class: usize, i: usize) -> RgbImage {
    let (w, h) = IMAGE_SIZE;
    RgbImage::from_fn(w, h, |x, y| {
        let v = (i * 37 + x as usize * 3 + y as usize * 5 + class * 80) % 256;
        Rgb([v as u8, ((v * 7 + i) % 256) as u8, ((x * y) as usize % 256) as u8])
    })
}

/// Every tenth image of a class has both ankles invisible, so the keypoint
/// rule abstains on it. Every seventh also carries a smaller second person.
pub fn build_dataset(root: &Path, counts: [usize; 3]) -> Dataset {
    let images_dir = root.join("images");
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut id = 0u64;
    for (c, &n) in counts.iter().enumerate() {
        let dir = images_dir.join(CLASSES[c]);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..n {
            id += 1;
            let name = format!("{}_{i:03}.png", CLASSES[c]);
            image(c, i).save(dir.join(&name)).unwrap();
            images.push(json!({ "id": id, "file_name": name, "width": IMAGE_SIZE.0, "height": IMAGE_SIZE.1 }));
            let sk = skeleton(c, id as usize);
            let kp: Vec<f64> = sk
                .iter()
                .enumerate()
                .flat_map(|(k, &(x, y))| {
                    let hidden = i % 10 == 9 && (k == 15 || k == 16);
                    [x, y, if hidden { 0.0 } else { 2.0 }]
                })
                .collect();
            annotations.push(json!({
                "image_id": id, "category_id": 1, "iscrowd": 0,
                "bbox": [20.0, 2.0, 28.0, 44.0], "keypoints": kp,
            }));
            if i % 7 == 3 {
                annotations.push(json!({
                    "image_id": id, "category_id": 1, "iscrowd": 0,
                    "bbox": [1.0, 1.0, 8.0, 10.0], "keypoints": [],
                }));
            }
        }
    }
    let coco = root.join("annotations.json");
    let doc: Value = json!({ "images": images, "annotations": annotations, "categories": [{ "id": 1, "name": "person" }] });
    std::fs::write(&coco, serde_json::to_vec(&doc).unwrap()).unwrap();
    Dataset { root: root.to_path_buf(), images_dir, coco, n_images: counts.iter().sum() }
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_posepilot")
}

pub fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).env_remove("POSEPILOT_CACHE_DIR").output().expect("binary runs")
}

/// Runs the CLI and panics with its stderr when it fails.
pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "posepilot {args:?} failed ({}):\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Ingest and split into `root/manifest.jsonl`.
pub fn split_manifest(ds: &Dataset) -> PathBuf {
    let manifest = ds.root.join("manifest.jsonl");
    run_ok(&["ingest", "--coco-annotations", p(&ds.coco), "--images-dir", p(&ds.images_dir), "--out", p(&manifest)]);
    run_ok(&["split", "--manifest", p(&manifest), "--seed", "42"]);
    manifest
}
