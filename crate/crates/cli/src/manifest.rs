use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::config::Job;

pub const MANIFEST_FILE: &str = "MANIFEST.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobEntry {
    #[serde(flatten)]
    pub job: Job,
    pub status: JobStatus,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub jobs: Vec<JobEntry>,
    pub complete: bool,
    /// Digest of every artifact except this file, once the run finished.
    #[serde(default)]
    pub bundle_sha256: Option<String>,
}

impl Manifest {
    pub fn all_complete(&self) -> bool {
        !self.jobs.is_empty() && self.jobs.iter().all(|j| j.status == JobStatus::Complete)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(&tmp, dir.join(MANIFEST_FILE))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&p).with_context(|| format!("no {MANIFEST_FILE} in {}", dir.display()))?;
        serde_json::from_slice(&bytes).with_context(|| format!("reading {}", p.display()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over `(relative path, length, bytes)` of every file under `dir`
/// in path order, skipping the manifest.
pub fn bundle_digest(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir)?;
        let rel = rel.to_string_lossy().replace('\\', "/");
        if rel == MANIFEST_FILE || rel.ends_with(".tmp") {
            continue;
        }
        let bytes = fs::read(entry.path())?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_manifest_and_tracks_content() {
        let d = tempfile::tempdir().unwrap();
        fs::create_dir_all(d.path().join("a")).unwrap();
        fs::write(d.path().join("a/x.csv"), "1").unwrap();
        let h1 = bundle_digest(d.path()).unwrap();
        fs::write(d.path().join(MANIFEST_FILE), "{}").unwrap();
        assert_eq!(bundle_digest(d.path()).unwrap(), h1);
        fs::write(d.path().join("a/x.csv"), "2").unwrap();
        assert_ne!(bundle_digest(d.path()).unwrap(), h1);
        assert!(Manifest::read(d.path()).is_err());
    }
}
