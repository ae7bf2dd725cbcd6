//! Repository directories: `models/*.json` plus a `manifest.json` index.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::canonical::{hash_file, read_document, write_canonical, SCHEMA_VERSION};
use super::files::{load_model_checked, load_model_with_metadata, FileRef};
use crate::error::{Error, Result};
use crate::models::Classifier;

pub const MANIFEST_SCHEMA: &str = "crosskd/manifest";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODELS_DIR: &str = "models";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub teacher_id: usize,
    /// Relative to the repository directory.
    pub model_path: String,
    pub label_set: Vec<usize>,
    pub architecture: String,
    pub task_id: Option<usize>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub seed: Option<u64>,
    pub sha256: String,
}

/// A teacher that could not be trained; its presence marks the manifest partial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedTeacher {
    pub teacher_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepositoryManifest {
    pub schema: String,
    pub version: u64,
    pub pool: Option<FileRef>,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub failed: Vec<FailedTeacher>,
}

impl RepositoryManifest {
    pub fn is_partial(&self) -> bool {
        !self.failed.is_empty()
    }

    pub fn entry(&self, teacher_id: usize) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.teacher_id == teacher_id)
    }
}

pub fn model_file_name(teacher_id: usize) -> String {
    format!("teacher_{teacher_id:04}.json")
}

/// Indexes every model under `dir/models`, sorted by teacher id. `pool`, if
/// given, is recorded by path and hash.
pub fn build_manifest(dir: &Path, pool: Option<&Path>) -> Result<RepositoryManifest> {
    let models = dir.join(MODELS_DIR);
    let mut files: Vec<PathBuf> = Vec::new();
    if models.is_dir() {
        for entry in fs::read_dir(&models)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") && !is_hidden(&path) {
                files.push(path);
            }
        }
    }
    files.sort();
    let mut entries = Vec::with_capacity(files.len());
    let mut ids = BTreeSet::new();
    for path in files {
        let (model, meta) = load_model_with_metadata(&path)?;
        let teacher_id = meta.teacher_id.ok_or_else(|| Error::Malformed {
            path: path.clone(),
            reason: "metadata has no teacher_id".into(),
        })?;
        if !ids.insert(teacher_id) {
            return Err(Error::DuplicateTeacher(teacher_id));
        }
        let name = path.file_name().unwrap().to_string_lossy();
        entries.push(ManifestEntry {
            teacher_id,
            model_path: format!("{MODELS_DIR}/{name}"),
            label_set: model.label_set().to_vec(),
            architecture: model.architecture().to_string(),
            task_id: meta.task_id,
            train_accuracy: meta.train_accuracy,
            test_accuracy: meta.test_accuracy,
            seed: meta.seed,
            sha256: hash_file(&path)?,
        });
    }
    entries.sort_by_key(|e| e.teacher_id);
    let pool = match pool {
        Some(p) => {
            let sha256 = hash_file(p).map_err(|_| Error::DanglingReference(p.to_path_buf()))?;
            Some(FileRef {
                path: relative_path(dir, p)?,
                sha256,
            })
        }
        None => None,
    };
    Ok(RepositoryManifest {
        schema: MANIFEST_SCHEMA.into(),
        version: SCHEMA_VERSION,
        pool,
        entries,
        failed: Vec::new(),
    })
}

/// `target` relative to the directory `base`, with `/` separators.
pub fn relative_path(base: &Path, target: &Path) -> Result<String> {
    let base = fs::canonicalize(base)?;
    let target = fs::canonicalize(target)?;
    let b: Vec<_> = base.components().collect();
    let t: Vec<_> = target.components().collect();
    let common = b.iter().zip(&t).take_while(|(x, y)| x == y).count();
    let mut parts: Vec<String> = vec!["..".to_string(); b.len() - common];
    parts.extend(t[common..].iter().map(|c| c.as_os_str().to_string_lossy().into_owned()));
    Ok(parts.join("/"))
}

/// Resolves a recorded path against the directory it is relative to.
pub fn resolve(dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn is_hidden(path: &Path) -> bool {
    path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
}

pub fn write_manifest(dir: &Path, manifest: &RepositoryManifest) -> Result<String> {
    write_canonical(&dir.join(MANIFEST_FILE), manifest)
}

pub fn read_manifest(dir: &Path) -> Result<RepositoryManifest> {
    let manifest: RepositoryManifest = read_document(&dir.join(MANIFEST_FILE), MANIFEST_SCHEMA)?;
    let mut ids = BTreeSet::new();
    for e in &manifest.entries {
        if !ids.insert(e.teacher_id) {
            return Err(Error::DuplicateTeacher(e.teacher_id));
        }
    }
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub manifest: RepositoryManifest,
    /// Teachers whose model file no longer matches its recorded hash.
    pub drifted: Vec<usize>,
    pub pool_drifted: bool,
}

impl Verification {
    pub fn is_clean(&self) -> bool {
        self.drifted.is_empty() && !self.pool_drifted
    }
}

/// Recomputes every hash in the manifest. Missing files are errors; changed
/// files are reported.
pub fn verify_manifest(dir: &Path) -> Result<Verification> {
    let manifest = read_manifest(dir)?;
    let mut drifted = Vec::new();
    for e in &manifest.entries {
        let path = resolve(dir, &e.model_path);
        if !path.is_file() {
            return Err(Error::DanglingReference(path));
        }
        if hash_file(&path)? != e.sha256 {
            drifted.push(e.teacher_id);
        }
    }
    let pool_drifted = match &manifest.pool {
        Some(pool) => {
            let path = resolve(dir, &pool.path);
            if !path.is_file() {
                return Err(Error::DanglingReference(path));
            }
            hash_file(&path)? != pool.sha256
        }
        None => false,
    };
    Ok(Verification {
        manifest,
        drifted,
        pool_drifted,
    })
}

/// Loads every teacher listed in the manifest, checking hashes.
pub fn load_repository(dir: &Path) -> Result<Vec<(usize, Classifier)>> {
    let manifest = read_manifest(dir)?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let path = resolve(dir, &e.model_path);
            if !path.is_file() {
                return Err(Error::DanglingReference(path));
            }
            let (model, _) = load_model_checked(&path, &e.sha256)?;
            Ok((e.teacher_id, model))
        })
        .collect()
}

/// Single-writer advisory lock on a repository directory, released on drop.
#[derive(Debug)]
pub struct RepositoryLock {
    path: PathBuf,
}

impl RepositoryLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RepositoryLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
