use std::sync::atomic::{AtomicUsize, Ordering};

use image::RgbImage;
use posepilot_core::mock::{center_kernel, content_hash_parts, pseudo_embedding};
use posepilot_core::saliency::HeatMap;
use posepilot_core::Embedding;

use super::{check_prompts, Backend, BackendDescriptor};
use crate::error::Result;

pub const MOCK_DIM: usize = 512;
/// Spatial grid of the synthetic attribution, like a 16-pixel patch grid.
const MOCK_GRID: u32 = 14;

/// Pure function of input bytes: content hash seeds a unit vector. Counts
/// invocations so cache behavior is observable.
pub struct MockBackend {
    descriptor: BackendDescriptor,
    text_calls: AtomicUsize,
    image_calls: AtomicUsize,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self::with_name("mock")
    }

    pub fn with_name(name: &str) -> Self {
        Self {
            descriptor: BackendDescriptor {
                name: name.to_string(),
                embedding_dim: MOCK_DIM,
                native_input_size: (224, 224),
                supports_attribution: true,
            },
            text_calls: AtomicUsize::new(0),
            image_calls: AtomicUsize::new(0),
        }
    }

    /// Number of prompts embedded so far.
    pub fn text_invocations(&self) -> usize {
        self.text_calls.load(Ordering::SeqCst)
    }

    pub fn image_invocations(&self) -> usize {
        self.image_calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_image(&self, image: &RgbImage) -> Result<Embedding> {
        self.image_calls.fetch_add(1, Ordering::SeqCst);
        let (w, h) = image.dimensions();
        let hash = content_hash_parts(&[b"image", &w.to_le_bytes(), &h.to_le_bytes(), image.as_raw()]);
        Ok(pseudo_embedding(hash, MOCK_DIM)?)
    }

    fn embed_texts(&self, prompts: &[String]) -> Result<Vec<Embedding>> {
        check_prompts(&self.descriptor.name, prompts)?;
        self.text_calls.fetch_add(prompts.len(), Ordering::SeqCst);
        prompts
            .iter()
            .map(|p| Ok(pseudo_embedding(content_hash_parts(&[b"text", p.as_bytes()]), MOCK_DIM)?))
            .collect()
    }

    fn attribute_grid(&self, _image: &RgbImage, _prompt: &str) -> Result<HeatMap> {
        Ok(center_kernel(MOCK_GRID, MOCK_GRID))
    }
}
