//! Run directories: an exclusive lock and a manifest of produced artifacts.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Held for the lifetime of a command; removes the lockfile on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        let mut file = OpenOptions::new().write(true).create_new(true).open(&path).with_context(|| {
            format!(
                "output directory {} is in use by another command (remove {} if stale)",
                dir.display(),
                path.display()
            )
        })?;
        writeln!(file, "{}", std::process::id())?;
        Ok(Self { path })
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// False until every listed artifact has been written.
    pub complete: bool,
    pub config: ExperimentConfig,
    /// Paths relative to the phase directory.
    pub checkpoints: BTreeMap<String, PathBuf>,
    pub reports: BTreeMap<String, PathBuf>,
    pub artifacts: BTreeMap<String, PathBuf>,
}

/// One phase directory (`<out>/det` or `<out>/gan`) with its manifest.
#[derive(Debug)]
pub struct PhaseDir {
    pub root: PathBuf,
    manifest: RunManifest,
}

impl PhaseDir {
    /// Creates the directory and writes an incomplete manifest.
    pub fn start(root: PathBuf, command: &str, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&root).with_context(|| format!("cannot create {}", root.display()))?;
        let stale = root.join(MANIFEST_FILE);
        if stale.exists() {
            std::fs::remove_file(&stale)?;
        }
        let dir = Self {
            root,
            manifest: RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_owned(),
                command: command.to_owned(),
                complete: false,
                config: config.clone(),
                checkpoints: BTreeMap::new(),
                reports: BTreeMap::new(),
                artifacts: BTreeMap::new(),
            },
        };
        dir.write()?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint(&mut self, key: &str, name: &str) -> PathBuf {
        self.manifest.checkpoints.insert(key.to_owned(), name.into());
        self.path(name)
    }

    pub fn report(&mut self, key: &str, name: &str) -> PathBuf {
        self.manifest.reports.insert(key.to_owned(), name.into());
        self.path(name)
    }

    pub fn artifact(&mut self, key: &str, name: &str) -> PathBuf {
        self.manifest.artifacts.insert(key.to_owned(), name.into());
        self.path(name)
    }

    /// Marks the manifest complete after checking every artifact exists.
    pub fn finish(mut self) -> Result<PathBuf> {
        let m = &self.manifest;
        for rel in m.checkpoints.values().chain(m.reports.values()).chain(m.artifacts.values()) {
            let p = self.root.join(rel);
            ensure!(p.is_file(), "declared artifact {} was not written", p.display());
        }
        self.manifest.complete = true;
        self.write()?;
        Ok(self.root)
    }

    fn write(&self) -> Result<()> {
        probcast::io::write_json(&self.root.join(MANIFEST_FILE), &self.manifest)?;
        Ok(())
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    Ok(probcast::io::read_json(&dir.join(MANIFEST_FILE))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = RunLock::acquire(dir.path()).unwrap();
        let err = RunLock::acquire(dir.path()).unwrap_err().to_string();
        assert!(err.contains("in use"), "{err}");
        drop(lock);
        assert!(!dir.path().join(LOCK_FILE).exists());
        RunLock::acquire(dir.path()).unwrap();
    }
}
