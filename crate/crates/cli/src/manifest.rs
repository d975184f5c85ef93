use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<ArtifactEntry>,
    pub timings: Vec<StageTiming>,
    pub failures: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the experiment configuration. The output location is left
/// out, so the same experiment hashes alike wherever it is written.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut cfg = cfg.clone();
    cfg.output_dir = PathBuf::new();
    sha256_hex(cfg.to_config_string().as_bytes())
}

impl RunManifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            artifacts: Vec::new(),
            timings: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Hashes `path` and records it relative to `root`.
    pub fn record(&mut self, root: &Path, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.artifacts.push(ArtifactEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn record_all(&mut self, root: &Path, paths: &[PathBuf]) -> std::io::Result<()> {
        for p in paths {
            self.record(root, p)?;
        }
        Ok(())
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("manifest_{}.toml", self.command));
        std::fs::write(&path, toml::to_string(self).expect("manifest serialises"))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn hash_tracks_config() {
        let a = ExperimentConfig::desk();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.output_dir = "elsewhere".into();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
