//! Run manifest: what a command read, what it wrote (with content hashes),
//! and how long each stage took. Timings are the only field allowed to
//! differ between reruns; everything else is a determinism check.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<ArtifactRecord>,
    pub timings_s: Vec<StageTiming>,
}

#[derive(Debug, Serialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_s: Vec::new(),
        }
    }

    pub fn record_input(&mut self, label: impl Into<String>) {
        self.inputs.push(label.into());
    }

    /// Hashes a file that the command just wrote under `out_dir`.
    pub fn record_output(&mut self, out_dir: &Path, relative: &str) -> anyhow::Result<()> {
        let full: PathBuf = out_dir.join(relative);
        let bytes = std::fs::read(&full)
            .map_err(|e| anyhow::anyhow!("cannot hash output {}: {e}", full.display()))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.outputs.push(ArtifactRecord {
            path: relative.to_string(),
            bytes: bytes.len() as u64,
            sha256: format!("{:x}", hasher.finalize()),
        });
        Ok(())
    }

    pub fn record_timing(&mut self, stage: &str, started: Instant) {
        self.timings_s.push(StageTiming {
            stage: stage.to_string(),
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    /// Writes `manifest.json`; the manifest does not hash itself.
    pub fn write(&self, out_dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, text + "\n")
            .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
        Ok(())
    }
}

/// Serializes a value as pretty JSON under `out_dir` and records it.
pub fn write_json<T: Serialize>(
    manifest: &mut Manifest,
    out_dir: &Path,
    relative: &str,
    value: &T,
) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let path = out_dir.join(relative);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, text + "\n")
        .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
    manifest.record_output(out_dir, relative)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_carry_stable_hashes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"hello").unwrap();
        let mut manifest = Manifest::new("measure", "deadbeef".to_string(), 1);
        manifest.record_output(dir.path(), "a.txt").unwrap();
        assert_eq!(manifest.outputs[0].bytes, 5);
        assert_eq!(
            manifest.outputs[0].sha256,
            "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824"
        );
        manifest.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        assert!(text.contains("\"command\": \"measure\""));
    }
}
