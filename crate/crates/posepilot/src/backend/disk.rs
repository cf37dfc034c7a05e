use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use posepilot_core::Embedding;

use super::sha256_hex;
use crate::error::{Error, Result};
use crate::fsutil;

/// Content-addressed store: one `<digest>.f32` file of little-endian floats
/// per entry, plus `index.txt` with `digest<TAB>kind<TAB>dim<TAB>key` lines
/// (the key JSON-quoted so prompts with tabs or newlines stay on one line).
pub struct DiskCache {
    dir: PathBuf,
    index: Mutex<()>,
}

impl DiskCache {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), index: Mutex::new(()) })
    }

    fn digest(kind: &str, key: &str) -> String {
        sha256_hex(&[kind.as_bytes(), key.as_bytes()])
    }

    pub fn get(&self, kind: &str, key: &str) -> Result<Option<Embedding>> {
        let path = self.dir.join(format!("{}.f32", Self::digest(kind, key)));
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        if bytes.len() % 4 != 0 || bytes.is_empty() {
            return Err(Error::Format { path, message: "cache entry is not a float32 vector".into() });
        }
        let v: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Some(Embedding::from_unit(v)?))
    }

    pub fn put(&self, kind: &str, key: &str, e: &Embedding) -> Result<()> {
        let digest = Self::digest(kind, key);
        let path = self.dir.join(format!("{digest}.f32"));
        let bytes: Vec<u8> = e.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
        fsutil::write_atomic(&path, &bytes)?;
        let _guard = self.index.lock().expect("index lock");
        let index = self.dir.join("index.txt");
        let mut f = OpenOptions::new().create(true).append(true).open(&index).map_err(|e| Error::io(&index, e))?;
        let quoted = serde_json::to_string(key).expect("strings serialize");
        writeln!(f, "{digest}\t{kind}\t{}\t{quoted}", e.dim()).map_err(|e| Error::io(&index, e))?;
        Ok(())
    }
}
