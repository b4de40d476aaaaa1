//! Content-addressed stage cache.
//!
//! Each stage writes into `<output>/cache/<stage>/<key>/`. A directory is
//! only visible under its key once complete: outputs are written to a
//! staging directory and renamed into place together with a
//! `_complete.json` listing every file and its hash. Completed directories
//! are never modified.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{PipelineError, Result};

const MARKER: &str = "_complete.json";

/// Bumped whenever an on-disk artifact layout changes.
pub const CACHE_FORMAT: u32 = 1;

/// Incremental builder for a stage key.
pub struct KeyBuilder {
    hasher: Sha256,
}

impl KeyBuilder {
    pub fn new(stage: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(format!("bikedepth-cache-v{CACHE_FORMAT}\0{stage}\0").as_bytes());
        KeyBuilder { hasher }
    }

    fn label(&mut self, label: &str) {
        self.hasher.update(label.as_bytes());
        self.hasher.update([0u8]);
    }

    pub fn value(mut self, label: &str, value: &impl Serialize) -> Self {
        self.label(label);
        let bytes = serde_json::to_vec(value).expect("key material serialises");
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
        self
    }

    /// Adds the contents of a file.
    pub fn file(mut self, label: &str, path: &Path) -> Result<Self> {
        self.label(label);
        self.hasher.update(file_sha256(path)?.as_bytes());
        Ok(self)
    }

    pub fn finish(self) -> String {
        hex(&self.hasher.finalize()[..16])
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| PipelineError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// One file written by a stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactFile {
    /// Path relative to the stage directory, with `/` separators.
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
    /// Data rows of a delimited file.
    pub rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Marker {
    stage: String,
    key: String,
    files: Vec<ArtifactFile>,
}

/// A directory being filled by a stage.
#[derive(Debug)]
pub struct Staging {
    pub dir: PathBuf,
}

impl Drop for Staging {
    fn drop(&mut self) {
        // Left over only when the stage failed or lost a race.
        let _ = fs::remove_dir_all(&self.dir);
    }
}

/// Outcome of recomputing a cached stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditResult {
    pub stage: String,
    pub key: String,
    pub files_compared: usize,
    pub mismatches: Vec<String>,
}

impl AuditResult {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

static STAGING_COUNTER: AtomicU64 = AtomicU64::new(0);

impl Cache {
    /// Cache rooted at `<output>/cache`.
    pub fn new(output: &Path) -> Self {
        Cache { root: output.join("cache") }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(key)
    }

    pub fn is_complete(&self, stage: &str, key: &str) -> bool {
        self.stage_dir(stage, key).join(MARKER).is_file()
    }

    pub fn begin(&self, stage: &str, key: &str) -> Result<Staging> {
        let n = STAGING_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = self.root.join(stage).join(format!(".staging-{key}-{}-{n}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        Ok(Staging { dir })
    }

    /// Publishes a staging directory under its key. When another writer
    /// published the same key first, that copy is kept.
    pub fn commit(&self, staging: Staging, stage: &str, key: &str) -> Result<Vec<ArtifactFile>> {
        let files = describe(&staging.dir)?;
        let marker = Marker { stage: stage.into(), key: key.into(), files: files.clone() };
        let marker_path = staging.dir.join(MARKER);
        let body = serde_json::to_vec_pretty(&marker).expect("marker serialises");
        fs::write(&marker_path, body).map_err(|e| PipelineError::io(&marker_path, e))?;
        let dest = self.stage_dir(stage, key);
        if self.is_complete(stage, key) {
            return self.files(stage, key);
        }
        if dest.exists() {
            fs::remove_dir_all(&dest).map_err(|e| PipelineError::io(&dest, e))?;
        }
        match fs::rename(&staging.dir, &dest) {
            Ok(()) => Ok(files),
            Err(_) if self.is_complete(stage, key) => self.files(stage, key),
            Err(e) => Err(PipelineError::io(&dest, e)),
        }
    }

    /// Files of a completed stage directory.
    pub fn files(&self, stage: &str, key: &str) -> Result<Vec<ArtifactFile>> {
        let path = self.stage_dir(stage, key).join(MARKER);
        let body = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
        let marker: Marker =
            serde_json::from_slice(&body).map_err(|e| PipelineError::Cache(format!("{}: {e}", path.display())))?;
        if marker.stage != stage || marker.key != key {
            return Err(PipelineError::Cache(format!("{} names another stage", path.display())));
        }
        Ok(marker.files)
    }

    /// Compares a fresh recomputation in `staging` with the bytes on disk
    /// of the cached copy.
    pub fn audit(&self, staging: &Staging, stage: &str, key: &str) -> Result<AuditResult> {
        self.files(stage, key)?;
        let mut cached = describe(&self.stage_dir(stage, key))?;
        cached.retain(|f| f.name != MARKER);
        let fresh = describe(&staging.dir)?;
        let mut mismatches = Vec::new();
        for f in &cached {
            match fresh.iter().find(|g| g.name == f.name) {
                Some(g) if g.sha256 == f.sha256 => {}
                Some(_) => mismatches.push(format!("{} differs", f.name)),
                None => mismatches.push(format!("{} missing from recomputation", f.name)),
            }
        }
        for g in &fresh {
            if !cached.iter().any(|f| f.name == g.name) {
                mismatches.push(format!("{} not in cache", g.name));
            }
        }
        Ok(AuditResult { stage: stage.into(), key: key.into(), files_compared: cached.len(), mismatches })
    }
}

/// Lists files below `dir` in sorted order with their sizes and hashes.
fn describe(dir: &Path) -> Result<Vec<ArtifactFile>> {
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

fn walk(base: &Path, dir: &Path, out: &mut Vec<ArtifactFile>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| PipelineError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            walk(base, &path, out)?;
            continue;
        }
        let name = path
            .strip_prefix(base)
            .expect("walked below base")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        if name == MARKER {
            continue;
        }
        let bytes = fs::metadata(&path).map_err(|e| PipelineError::io(&path, e))?.len();
        let rows = if name.ends_with(".csv") {
            let body = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
            Some(body.iter().filter(|b| **b == b'\n').count().saturating_sub(1))
        } else {
            None
        };
        out.push(ArtifactFile { name, bytes, sha256: file_sha256(&path)?, rows });
    }
    Ok(())
}
