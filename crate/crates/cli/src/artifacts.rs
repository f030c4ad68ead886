use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Everything needed to re-run a command bit-identically.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub resolved_config: Value,
    pub artifacts: Vec<PathBuf>,
    pub started_utc: String,
    pub wall_clock_seconds: f64,
    pub threads: usize,
}

/// Writes through a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().context("artifact path has no file name")?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    file.write_all(contents.as_bytes())?;
    file.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// Output directory plus the `<command>-<timestamp>-<seed>` stem shared by
/// one run's files.
pub struct ArtifactSet {
    dir: PathBuf,
    stem: String,
    written: Vec<PathBuf>,
}

impl ArtifactSet {
    pub fn new(dir: &Path, command: &str, timestamp: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let base = format!("{command}-{timestamp}-{seed}");
        let mut stem = base.clone();
        let mut k = 1;
        while dir.join(format!("{stem}.json")).exists() || dir.join(format!("{stem}.csv")).exists()
        {
            stem = format!("{base}-{k}");
            k += 1;
        }
        Ok(ArtifactSet {
            dir: dir.to_path_buf(),
            stem,
            written: Vec::new(),
        })
    }

    /// Writes `<stem><suffix>`.
    pub fn write(&mut self, suffix: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(format!("{}{suffix}", self.stem));
        write_atomic(&path, contents)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<PathBuf> {
        manifest.artifacts = self.written;
        let path = self.dir.join(format!("{}.manifest.json", self.stem));
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&path, &text)?;
        Ok(path)
    }
}
