//! Run manifest written next to every command's outputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, shown: &str) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(Self {
            path: shown.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Inputs, resolved config and produced files of one command run.
///
/// Everything except the two timestamps is a function of the inputs, so two
/// runs can be compared by their digests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<FileDigest>,
    pub checkpoint: Option<String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Collects artifacts while a command writes into its output directory.
pub struct ManifestBuilder {
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, out_dir: &Path, config_hash: String, seed: Option<u64>) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                config_hash,
                seed,
                inputs: Vec::new(),
                artifacts: Vec::new(),
                checkpoint: None,
                started_unix_ms: now_ms(),
                finished_unix_ms: 0,
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        let d = FileDigest::of(path, &path.display().to_string())?;
        self.manifest.inputs.push(d);
        Ok(())
    }

    /// Writes `contents` to `name` inside the output directory and records it.
    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents.as_ref()).with_context(|| format!("writing {}", path.display()))?;
        self.manifest.artifacts.push(FileDigest::of(&path, name)?);
        Ok(path)
    }

    /// Records a file some other writer already produced.
    pub fn record(&mut self, name: &str) -> anyhow::Result<()> {
        let d = FileDigest::of(&self.out_dir.join(name), name)?;
        self.manifest.artifacts.push(d);
        Ok(())
    }

    pub fn checkpoint(&mut self, name: &str) {
        self.manifest.checkpoint = Some(name.to_string());
    }

    pub fn finish(mut self) -> anyhow::Result<RunManifest> {
        self.manifest.finished_unix_ms = now_ms();
        let path = self.out_dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.manifest)
    }
}
