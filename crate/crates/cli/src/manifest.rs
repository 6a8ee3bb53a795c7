//! Run manifests and staged output directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::app::Failure;
use crate::formats::write_json;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub out_dir: String,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub tool_version: String,
    pub config_hash: String,
    /// File names relative to `out_dir`, in the order they are written.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_path: Option<&Path>,
        out_dir: &Path,
        seed: Option<u64>,
        config_hash: String,
    ) -> Self {
        Self {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            out_dir: out_dir.display().to_string(),
            seed,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            outputs: Vec::new(),
        }
    }
}

/// Results are written into a hidden sibling directory that is renamed onto
/// the requested path once the run finishes, so a reader never sees a
/// half-written output directory.
#[derive(Debug)]
pub struct OutputDir {
    target: PathBuf,
    staging: PathBuf,
    manifest: RunManifest,
    committed: bool,
}

impl OutputDir {
    /// Creates the staging directory and writes the manifest, which lists
    /// `outputs` up front.
    pub fn create(
        target: &Path,
        mut manifest: RunManifest,
        outputs: &[&str],
    ) -> Result<Self, Failure> {
        if target.exists() {
            let empty = target.is_dir()
                && fs::read_dir(target)
                    .map_err(|e| Failure::io(target, e))?
                    .next()
                    .is_none();
            if !empty {
                return Err(Failure::Usage(format!(
                    "output directory {} already exists",
                    target.display()
                )));
            }
        }
        let name = target
            .file_name()
            .ok_or_else(|| Failure::Usage(format!("invalid output path {}", target.display())))?
            .to_string_lossy()
            .into_owned();
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| Failure::io(&parent, e))?;
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Failure::io(&staging, e))?;
        }
        fs::create_dir(&staging).map_err(|e| Failure::io(&staging, e))?;
        manifest.outputs = std::iter::once(MANIFEST_NAME)
            .chain(outputs.iter().copied())
            .map(String::from)
            .collect();
        write_json(&staging.join(MANIFEST_NAME), &manifest)?;
        Ok(Self {
            target: target.to_path_buf(),
            staging,
            manifest,
            committed: false,
        })
    }

    /// Path of a declared output inside the staging directory.
    pub fn path(&self, name: &str) -> PathBuf {
        debug_assert!(
            self.manifest.outputs.iter().any(|o| o == name),
            "undeclared output {name}"
        );
        self.staging.join(name)
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Moves the finished directory into place.
    pub fn commit(mut self) -> Result<PathBuf, Failure> {
        if self.target.exists() {
            fs::remove_dir(&self.target).map_err(|e| Failure::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| Failure::io(&self.target, e))?;
        self.committed = true;
        Ok(self.target.clone())
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(out: &Path) -> RunManifest {
        RunManifest::new("test", None, out, Some(3), "abc".into())
    }

    #[test]
    fn manifest_first_then_commit() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("run");
        let out = OutputDir::create(&target, manifest(&target), &["a.txt"]).unwrap();
        assert!(!target.exists());
        fs::write(out.path("a.txt"), "x").unwrap();
        out.commit().unwrap();
        let m: RunManifest = crate::formats::read_json(&target.join(MANIFEST_NAME)).unwrap();
        assert_eq!(m.outputs, vec!["manifest.json", "a.txt"]);
        assert_eq!(m.seed, Some(3));
        assert!(target.join("a.txt").exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);
    }

    #[test]
    fn abandoned_runs_leave_nothing() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("run");
        drop(OutputDir::create(&target, manifest(&target), &[]).unwrap());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn refuses_non_empty_target() {
        let root = tempfile::tempdir().unwrap();
        fs::write(root.path().join("keep"), "x").unwrap();
        let err = OutputDir::create(root.path(), manifest(root.path()), &[]).unwrap_err();
        assert!(matches!(err, Failure::Usage(_)));
    }
}
