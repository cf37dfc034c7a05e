//! Image/text encoders behind one interface, plus the embedding caches.
//!
//! A [`Backend`] sees images already resized to its native input size and
//! returns unit embeddings. [`Encoder`] wraps a backend with the in-memory
//! and optional on-disk caches keyed by exact prompt text and image content.

mod disk;
mod external;
mod mock;
mod registry;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use image::imageops::FilterType;
use image::RgbImage;
use posepilot_core::saliency::HeatMap;
use posepilot_core::Embedding;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use disk::DiskCache;
pub use external::{serve_stub, ExternalBackend};
pub use mock::MockBackend;
pub use registry::{BackendSpec, Registry, EXTERNAL_FAMILIES};

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub embedding_dim: usize,
    pub native_input_size: (u32, u32),
    pub supports_attribution: bool,
}

/// Implementations must be safe to call from several threads at once; they
/// may serialize device access internally.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// `image` is already at `native_input_size`.
    fn embed_image(&self, image: &RgbImage) -> Result<Embedding>;

    fn embed_texts(&self, prompts: &[String]) -> Result<Vec<Embedding>>;

    /// Raw attribution on the backend's own spatial grid for `image` (at
    /// native size) and `prompt`. Entries may be negative; callers rectify.
    fn attribute_grid(&self, image: &RgbImage, prompt: &str) -> Result<HeatMap>;
}

pub fn decode_image(path: &Path) -> Result<RgbImage> {
    let bytes = fsutil::read_bytes(path)?;
    decode_image_bytes(&bytes, path)
}

pub fn decode_image_bytes(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Plain bilinear resize to `size`, no aspect-preserving crop.
pub fn prepare_image(image: &RgbImage, size: (u32, u32)) -> RgbImage {
    if image.dimensions() == size {
        return image.clone();
    }
    image::imageops::resize(image, size.0, size.1, FilterType::Triangle)
}

fn check_prompts(backend: &str, prompts: &[String]) -> Result<()> {
    if prompts.is_empty() {
        return Err(Error::backend(backend, "no prompts to embed"));
    }
    if let Some(i) = prompts.iter().position(|p| p.trim().is_empty()) {
        return Err(Error::Core(posepilot_core::Error::InvalidInput(format!("prompt {i} is blank"))));
    }
    Ok(())
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    fsutil::hex(&h.finalize())
}

/// A backend plus its embedding caches. Cheap to share behind an `Arc`.
pub struct Encoder {
    backend: Arc<dyn Backend>,
    texts: RwLock<HashMap<String, Embedding>>,
    images: RwLock<HashMap<String, Embedding>>,
    disk: Option<DiskCache>,
}

impl Encoder {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self { backend, texts: RwLock::default(), images: RwLock::default(), disk: None }
    }

    /// Adds an on-disk cache under `root/<backend name>/`.
    pub fn with_disk_cache(mut self, root: &Path) -> Result<Self> {
        self.disk = Some(DiskCache::open(&root.join(&self.backend.descriptor().name))?);
        Ok(self)
    }

    /// Uses `POSEPILOT_CACHE_DIR` when set.
    pub fn with_env_cache(self) -> Result<Self> {
        match std::env::var_os("POSEPILOT_CACHE_DIR") {
            Some(dir) if !dir.is_empty() => self.with_disk_cache(Path::new(&dir)),
            _ => Ok(self),
        }
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        self.backend.descriptor()
    }

    pub fn name(&self) -> &str {
        &self.backend.descriptor().name
    }

    /// Embeddings in input order; only prompts missing from every cache
    /// reach the backend, each at most once per call.
    pub fn text_embeddings(&self, prompts: &[String]) -> Result<Vec<Embedding>> {
        check_prompts(self.name(), prompts)?;
        let mut missing: Vec<String> = Vec::new();
        {
            let cache = self.texts.read().expect("text cache lock");
            for p in prompts {
                if !cache.contains_key(p) && !missing.contains(p) {
                    missing.push(p.clone());
                }
            }
        }
        let mut from_disk = Vec::new();
        if let Some(disk) = &self.disk {
            let mut still = Vec::new();
            for p in missing {
                match disk.get("text", &p)? {
                    Some(e) => from_disk.push((p, e)),
                    None => still.push(p),
                }
            }
            missing = still;
        }
        let fresh = if missing.is_empty() { Vec::new() } else { self.backend.embed_texts(&missing)? };
        if fresh.len() != missing.len() {
            return Err(Error::backend(self.name(), format!("{} prompts in, {} embeddings out", missing.len(), fresh.len())));
        }
        let dim = self.descriptor().embedding_dim;
        if let Some(e) = fresh.iter().find(|e| e.dim() != dim) {
            return Err(Error::backend(self.name(), format!("text embedding has dim {}, expected {dim}", e.dim())));
        }
        if let Some(disk) = &self.disk {
            for (p, e) in missing.iter().zip(&fresh) {
                disk.put("text", p, e)?;
            }
        }
        let mut cache = self.texts.write().expect("text cache lock");
        for (p, e) in from_disk.into_iter().chain(missing.into_iter().zip(fresh)) {
            cache.insert(p, e);
        }
        Ok(prompts.iter().map(|p| cache[p].clone()).collect())
    }

    /// Embeds the file at `path`, keyed by a digest of its bytes and the
    /// backend's input size.
    pub fn image_embedding(&self, path: &Path) -> Result<Embedding> {
        let bytes = fsutil::read_bytes(path)?;
        let (w, h) = self.descriptor().native_input_size;
        let key = sha256_hex(&[&bytes, &w.to_le_bytes(), &h.to_le_bytes()]);
        if let Some(e) = self.images.read().expect("image cache lock").get(&key) {
            return Ok(e.clone());
        }
        if let Some(disk) = &self.disk {
            if let Some(e) = disk.get("image", &key)? {
                self.images.write().expect("image cache lock").insert(key, e.clone());
                return Ok(e);
            }
        }
        let img = decode_image_bytes(&bytes, path)?;
        let e = self.backend.embed_image(&prepare_image(&img, (w, h)))?;
        if e.dim() != self.descriptor().embedding_dim {
            return Err(Error::backend(self.name(), format!("image embedding has dim {}", e.dim())));
        }
        if let Some(disk) = &self.disk {
            disk.put("image", &key, &e)?;
        }
        self.images.write().expect("image cache lock").insert(key, e.clone());
        Ok(e)
    }

    /// Attribution for `prompt` upsampled to the original image size,
    /// rectified and max-normalized.
    pub fn attribute(&self, path: &Path, prompt: &str) -> Result<HeatMap> {
        if !self.descriptor().supports_attribution {
            return Err(Error::Unsupported(self.name().to_string()));
        }
        let img = decode_image(path)?;
        let grid = self.backend.attribute_grid(&prepare_image(&img, self.descriptor().native_input_size), prompt)?;
        let rectified = HeatMap::rectified(grid.width(), grid.height(), grid.values().to_vec())?;
        let (w, h) = img.dimensions();
        Ok(rectified.upsample_bilinear(w, h)?.max_normalized()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png(dir: &Path, name: &str, seed: u8) -> std::path::PathBuf {
        let img = RgbImage::from_fn(32, 24, |x, y| image::Rgb([seed, x as u8, y as u8]));
        let p = dir.join(name);
        img.save(&p).unwrap();
        p
    }

    #[test]
    fn text_cache_skips_backend() {
        let mock = Arc::new(MockBackend::new());
        let enc = Encoder::new(mock.clone());
        let prompts = vec!["a".to_string(), "b".to_string(), "a".to_string()];
        let first = enc.text_embeddings(&prompts).unwrap();
        assert_eq!(mock.text_invocations(), 2);
        assert_eq!(first[0], first[2]);
        enc.text_embeddings(&prompts).unwrap();
        assert_eq!(mock.text_invocations(), 2);
    }

    #[test]
    fn blank_prompt_is_input_error() {
        let enc = Encoder::new(Arc::new(MockBackend::new()));
        assert!(matches!(enc.text_embeddings(&["  ".to_string()]), Err(Error::Core(_))));
    }

    #[test]
    fn images_are_deterministic_and_separated() {
        let dir = tempfile::tempdir().unwrap();
        let a = png(dir.path(), "a.png", 1);
        let b = png(dir.path(), "b.png", 2);
        let enc = Encoder::new(Arc::new(MockBackend::new()));
        let ea = enc.image_embedding(&a).unwrap();
        let ea2 = Encoder::new(Arc::new(MockBackend::new())).image_embedding(&a).unwrap();
        let eb = enc.image_embedding(&b).unwrap();
        assert_eq!(ea, ea2);
        assert!((ea.norm() - 1.0).abs() < 1e-6);
        assert!(ea.dot(&eb).unwrap() < 0.99);
    }

    #[test]
    fn disk_cache_serves_second_encoder() {
        let dir = tempfile::tempdir().unwrap();
        let img = png(dir.path(), "a.png", 3);
        let cache = dir.path().join("cache");
        let first = Encoder::new(Arc::new(MockBackend::new())).with_disk_cache(&cache).unwrap();
        let e1 = first.image_embedding(&img).unwrap();
        let t1 = first.text_embeddings(&["x".to_string()]).unwrap();

        let mock = Arc::new(MockBackend::new());
        let second = Encoder::new(mock.clone()).with_disk_cache(&cache).unwrap();
        assert_eq!(second.image_embedding(&img).unwrap(), e1);
        assert_eq!(second.text_embeddings(&["x".to_string()]).unwrap(), t1);
        assert_eq!(mock.text_invocations(), 0);
        assert_eq!(mock.image_invocations(), 0);
    }

    #[test]
    fn mock_attribution_is_center_weighted() {
        let dir = tempfile::tempdir().unwrap();
        let img = png(dir.path(), "a.png", 4);
        let enc = Encoder::new(Arc::new(MockBackend::new()));
        let m = enc.attribute(&img, "a person").unwrap();
        assert_eq!((m.width(), m.height()), (32, 24));
        assert!(m.values().iter().all(|&v| v >= 0.0));
        let max = m.values().iter().cloned().fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-12);
        assert!(m.get(16, 12) > m.get(0, 0));
    }

    #[test]
    fn undecodable_image_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not an image").unwrap();
        let enc = Encoder::new(Arc::new(MockBackend::new()));
        assert!(matches!(enc.image_embedding(&p), Err(Error::Image { .. })));
    }
}
