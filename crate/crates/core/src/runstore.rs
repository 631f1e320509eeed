//! Addressable run storage.
//!
//! Every pipeline stage reads and writes through a run directory containing a
//! manifest (frozen config, per-stage content hashes) plus one file per
//! stage. Hashes make staleness detection content-based, and a lock file
//! enforces a single writer per run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run '{0}' already exists")]
    RunExists(String),
    #[error("run '{0}' not found")]
    RunNotFound(String),
    #[error("corrupt run: stage '{stage}' fails its hash check")]
    CorruptRun { stage: String },
    #[error("stage '{0}' not present")]
    MissingStage(String),
    #[error("run '{0}' is locked by another writer")]
    Locked(String),
    #[error("config mismatch: run was started with a different config")]
    ConfigMismatch,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub file: String,
    pub sha256: String,
}

/// The run manifest: identity, frozen config, and per-stage hashes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: serde_json::Value,
    pub stages: BTreeMap<String, StageEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Handle on one run directory. Holds the writer lock for its lifetime.
pub struct RunStore {
    dir: PathBuf,
    manifest: RunManifest,
    _lock: LockGuard,
}

impl RunStore {
    /// Create a fresh run. Fails with [`StoreError::RunExists`] when the run
    /// id is already present under `root`.
    pub fn begin(root: &Path, run_id: &str, config: serde_json::Value) -> Result<Self, StoreError> {
        let dir = root.join(run_id);
        if dir.join(MANIFEST_FILE).exists() {
            return Err(StoreError::RunExists(run_id.to_string()));
        }
        fs::create_dir_all(&dir)?;
        let lock = Self::acquire_lock(&dir, run_id)?;
        let manifest = RunManifest {
            run_id: run_id.to_string(),
            config,
            stages: BTreeMap::new(),
        };
        let store = RunStore {
            dir,
            manifest,
            _lock: lock,
        };
        store.save_manifest()?;
        Ok(store)
    }

    /// Reopen an existing run, verifying every completed stage against its
    /// recorded hash.
    pub fn resume(root: &Path, run_id: &str) -> Result<Self, StoreError> {
        let dir = root.join(run_id);
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(StoreError::RunNotFound(run_id.to_string()));
        }
        let lock = Self::acquire_lock(&dir, run_id)?;
        let manifest: RunManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
        let store = RunStore {
            dir,
            manifest,
            _lock: lock,
        };
        for (stage, entry) in &store.manifest.stages {
            let bytes = fs::read(store.dir.join(&entry.file))
                .map_err(|_| StoreError::CorruptRun { stage: stage.clone() })?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(StoreError::CorruptRun { stage: stage.clone() });
            }
        }
        Ok(store)
    }

    /// Begin when absent, resume when present; a resumed run must have been
    /// started with an identical config snapshot.
    pub fn begin_or_resume(
        root: &Path,
        run_id: &str,
        config: serde_json::Value,
    ) -> Result<Self, StoreError> {
        if root.join(run_id).join(MANIFEST_FILE).exists() {
            let store = Self::resume(root, run_id)?;
            if store.manifest.config != config {
                return Err(StoreError::ConfigMismatch);
            }
            Ok(store)
        } else {
            Self::begin(root, run_id, config)
        }
    }

    fn acquire_lock(dir: &Path, run_id: &str) -> Result<LockGuard, StoreError> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(LockGuard { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(StoreError::Locked(run_id.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn save_manifest(&self) -> Result<(), StoreError> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn config(&self) -> &serde_json::Value {
        &self.manifest.config
    }

    pub fn stage_complete(&self, stage: &str) -> bool {
        self.manifest.stages.contains_key(stage)
    }

    /// Write a stage file and record its hash. The stage name is the file
    /// name, e.g. `corpus.jsonl`.
    pub fn write_stage(&mut self, stage: &str, bytes: &[u8]) -> Result<(), StoreError> {
        fs::write(self.dir.join(stage), bytes)?;
        self.manifest.stages.insert(
            stage.to_string(),
            StageEntry {
                file: stage.to_string(),
                sha256: sha256_hex(bytes),
            },
        );
        self.save_manifest()
    }

    /// Read a completed stage, verifying its hash.
    pub fn read_stage(&self, stage: &str) -> Result<Vec<u8>, StoreError> {
        let entry = self
            .manifest
            .stages
            .get(stage)
            .ok_or_else(|| StoreError::MissingStage(stage.to_string()))?;
        let bytes = fs::read(self.dir.join(&entry.file))
            .map_err(|_| StoreError::CorruptRun { stage: stage.to_string() })?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(StoreError::CorruptRun { stage: stage.to_string() });
        }
        Ok(bytes)
    }

    pub fn read_stage_string(&self, stage: &str) -> Result<String, StoreError> {
        let bytes = self.read_stage(stage)?;
        String::from_utf8(bytes).map_err(|e| {
            StoreError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
    }

    /// Path for auxiliary files that live beside stages but are not hashed,
    /// such as the backend transcript cache.
    pub fn aux_path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> serde_json::Value {
        serde_json::json!({"seed": 42, "mode": "zero-shot-cot"})
    }

    #[test]
    fn begin_initializes_empty_manifest() {
        let root = tempfile::tempdir().unwrap();
        let store = RunStore::begin(root.path(), "r1", config()).unwrap();
        assert!(store.manifest().stages.is_empty());
        assert_eq!(store.manifest().run_id, "r1");
    }

    #[test]
    fn begin_twice_collides() {
        let root = tempfile::tempdir().unwrap();
        {
            let _store = RunStore::begin(root.path(), "r1", config()).unwrap();
        }
        assert!(matches!(
            RunStore::begin(root.path(), "r1", config()),
            Err(StoreError::RunExists(_))
        ));
    }

    #[test]
    fn config_round_trips() {
        let root = tempfile::tempdir().unwrap();
        {
            let _store = RunStore::begin(root.path(), "r1", config()).unwrap();
        }
        let reopened = RunStore::resume(root.path(), "r1").unwrap();
        assert_eq!(reopened.config(), &config());
    }

    #[test]
    fn stage_round_trip_and_completion_flags() {
        let root = tempfile::tempdir().unwrap();
        let mut store = RunStore::begin(root.path(), "r1", config()).unwrap();
        assert!(!store.stage_complete("corpus.jsonl"));
        store.write_stage("corpus.jsonl", b"line one\n").unwrap();
        assert!(store.stage_complete("corpus.jsonl"));
        assert_eq!(store.read_stage("corpus.jsonl").unwrap(), b"line one\n");
    }

    #[test]
    fn tampered_stage_is_corrupt() {
        let root = tempfile::tempdir().unwrap();
        {
            let mut store = RunStore::begin(root.path(), "r1", config()).unwrap();
            store.write_stage("refs.jsonl", b"data\n").unwrap();
        }
        fs::write(root.path().join("r1/refs.jsonl"), b"tampered\n").unwrap();
        match RunStore::resume(root.path(), "r1") {
            Err(StoreError::CorruptRun { stage }) => assert_eq!(stage, "refs.jsonl"),
            other => panic!("expected CorruptRun, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn resume_of_complete_run_is_noop() {
        let root = tempfile::tempdir().unwrap();
        let manifest_before;
        {
            let mut store = RunStore::begin(root.path(), "r1", config()).unwrap();
            store.write_stage("a.jsonl", b"a\n").unwrap();
            manifest_before = store.manifest().clone();
        }
        let reopened = RunStore::resume(root.path(), "r1").unwrap();
        assert_eq!(reopened.manifest(), &manifest_before);
        assert!(reopened.stage_complete("a.jsonl"));
    }

    #[test]
    fn lock_excludes_second_writer() {
        let root = tempfile::tempdir().unwrap();
        let store = RunStore::begin(root.path(), "r1", config()).unwrap();
        assert!(matches!(
            RunStore::resume(root.path(), "r1"),
            Err(StoreError::Locked(_))
        ));
        drop(store);
        assert!(RunStore::resume(root.path(), "r1").is_ok());
    }

    #[test]
    fn begin_or_resume_rejects_changed_config() {
        let root = tempfile::tempdir().unwrap();
        {
            let _store = RunStore::begin_or_resume(root.path(), "r1", config()).unwrap();
        }
        let other = serde_json::json!({"seed": 43});
        assert!(matches!(
            RunStore::begin_or_resume(root.path(), "r1", other),
            Err(StoreError::ConfigMismatch)
        ));
    }

    #[test]
    fn missing_stage_reported() {
        let root = tempfile::tempdir().unwrap();
        let store = RunStore::begin(root.path(), "r1", config()).unwrap();
        assert!(matches!(
            store.read_stage("refs.jsonl"),
            Err(StoreError::MissingStage(_))
        ));
    }
}
