//! Prompt-set files (TOML) and the directory-backed store shared by the CLI
//! and the HTTP service.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use posepilot_core::prompts::{builtin, builtin_tiers, PromptSet};

use crate::error::{Error, Result};
use crate::fsutil;

pub fn parse_prompt_set(text: &str, path: &Path) -> Result<PromptSet> {
    let ps: PromptSet = toml::from_str(text).map_err(|e| Error::Format { path: path.to_path_buf(), message: e.to_string() })?;
    ps.validate_structure()?;
    Ok(ps)
}

pub fn load_prompt_set(path: &Path) -> Result<PromptSet> {
    parse_prompt_set(&fsutil::read_to_string(path)?, path)
}

pub fn prompt_set_to_toml(ps: &PromptSet) -> String {
    toml::to_string(ps).expect("prompt sets serialize to TOML")
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("prompt set id `{id}` must use letters, digits, `_`, `-` or `.`")))
    }
}

/// One `<set_id>.toml` per prompt set. Writers are serialized and every
/// accepted write bumps the revision.
pub struct PromptStore {
    dir: PathBuf,
    write: Mutex<()>,
}

impl PromptStore {
    /// Opens `dir`, creating it and seeding the built-in tiers if absent.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let store = Self { dir: dir.to_path_buf(), write: Mutex::new(()) };
        for ps in builtin_tiers() {
            let path = store.path_for(&ps.set_id);
            if !path.exists() {
                fsutil::write_atomic(&path, prompt_set_to_toml(&ps).as_bytes())?;
            }
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.toml"))
    }

    pub fn list(&self) -> Result<Vec<PromptSet>> {
        let mut out = Vec::new();
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        for p in paths {
            out.push(load_prompt_set(&p)?);
        }
        Ok(out)
    }

    pub fn get(&self, id: &str) -> Result<Option<PromptSet>> {
        check_id(id)?;
        let path = self.path_for(id);
        if !path.exists() {
            return Ok(None);
        }
        load_prompt_set(&path).map(Some)
    }

    /// Stores `ps` if `base_revision` matches the stored revision (0 for a
    /// new set). Returns the stored set with its new revision.
    pub fn put(&self, mut ps: PromptSet, base_revision: u64) -> Result<PromptSet> {
        check_id(&ps.set_id)?;
        ps.validate_structure()?;
        let _guard = self.write.lock().expect("store lock");
        let current = self.get(&ps.set_id)?.map_or(0, |s| s.revision);
        if current != base_revision {
            return Err(Error::RevisionConflict { id: ps.set_id, base: base_revision, current });
        }
        ps.revision = current + 1;
        fsutil::write_atomic(&self.path_for(&ps.set_id), prompt_set_to_toml(&ps).as_bytes())?;
        Ok(ps)
    }
}

/// Resolves a `--promptset` argument: an existing `.toml` path, then a store
/// entry, then a built-in id.
pub fn resolve_prompt_set(spec: &str, store: Option<&PromptStore>) -> Result<PromptSet> {
    let path = Path::new(spec);
    if spec.ends_with(".toml") || path.is_file() {
        return load_prompt_set(path);
    }
    if let Some(store) = store {
        if let Some(ps) = store.get(spec)? {
            return Ok(ps);
        }
    }
    builtin(spec).ok_or_else(|| Error::UnknownPromptSet(spec.to_string()))
}
