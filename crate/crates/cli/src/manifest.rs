//! Run-directory manifest and lock.
//!
//! `manifest.json` lists every stage in pipeline order with the digests of
//! its inputs, a digest of its parameters, the digest of every file it
//! wrote (paths relative to the run directory), its wall-clock duration and
//! free-form metrics. Durations and metrics describe the execution that
//! produced the outputs; everything else is a pure function of the inputs.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kgaug_core::digest::sha256_file;
use serde::{Deserialize, Serialize};

use crate::error::RunLocked;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const LOCK_FILE: &str = ".lock";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub inputs: BTreeMap<String, String>,
    pub params_digest: String,
    pub outputs: BTreeMap<String, String>,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metrics: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StageRecord {
    /// The parts that must be identical across reproducible executions.
    pub fn digest_view(&self) -> (&str, &BTreeMap<String, String>, &str, &BTreeMap<String, String>) {
        (&self.stage, &self.inputs, &self.params_digest, &self.outputs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub stages: Vec<StageRecord>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            version: MANIFEST_VERSION,
            stages: Vec::new(),
        }
    }
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Option<Self>> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let manifest: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        anyhow::ensure!(
            manifest.version == MANIFEST_VERSION,
            "{}: unsupported manifest version {}",
            path.display(),
            manifest.version
        );
        Ok(Some(manifest))
    }

    /// Writes atomically through a temporary file.
    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let tmp = run_dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Replaces the record for the same stage, or appends it.
    pub fn upsert(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|s| s.stage == record.stage) {
            Some(slot) => *slot = record,
            None => self.stages.push(record),
        }
    }

    /// Drops records for stages not in `keep`, preserving order.
    pub fn retain_stages(&mut self, keep: &[&str]) {
        self.stages.retain(|s| keep.contains(&s.stage.as_str()));
    }

    /// Every digest entry as `stage/inputs/<key>`, `stage/params` and
    /// `stage/outputs/<path>`.
    pub fn digest_entries(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for s in &self.stages {
            for (k, v) in &s.inputs {
                out.insert(format!("{}/inputs/{k}", s.stage), v.clone());
            }
            out.insert(format!("{}/params", s.stage), s.params_digest.clone());
            for (k, v) in &s.outputs {
                out.insert(format!("{}/outputs/{k}", s.stage), v.clone());
            }
        }
        out
    }
}

/// Regular files under `dir`, as sorted `/`-separated paths relative to
/// `base`.
pub fn list_files(base: &Path, dir: &Path) -> io::Result<Vec<String>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        if !d.exists() {
            continue;
        }
        for entry in fs::read_dir(&d)? {
            let entry = entry?;
            let path = entry.path();
            if entry.file_type()?.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(base).unwrap_or(&path);
                let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
                out.push(parts.join("/"));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Digest of every file under `base/sub`, keyed by path relative to `base`.
pub fn digest_tree(base: &Path, sub: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for rel in list_files(base, &base.join(sub))? {
        let path = base.join(&rel);
        let digest = sha256_file(&path).with_context(|| format!("hashing {}", path.display()))?;
        out.insert(rel, digest);
    }
    Ok(out)
}

/// Whether every listed file exists under `base` with the recorded digest.
pub fn outputs_intact(base: &Path, outputs: &BTreeMap<String, String>) -> bool {
    outputs
        .iter()
        .all(|(rel, digest)| sha256_file(&base.join(rel)).is_ok_and(|d| &d == digest))
}

/// Exclusive ownership of a run directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self> {
        fs::create_dir_all(run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
        let path = run_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(RunLocked(run_dir.to_path_buf()).into()),
            Err(e) => Err(anyhow::Error::new(e).context(format!("locking {}", run_dir.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
