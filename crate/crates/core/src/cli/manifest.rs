use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command run. Reruns with identical inputs and seed give
/// identical digests; only `wall_clock_seconds` differs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub seed: Option<u64>,
    /// Digest of the effective configuration as serialised JSON.
    pub config_digest: Option<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

/// Collects inputs and outputs while a command runs.
pub(crate) struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    config_digest: Option<String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            seed: None,
            config_digest: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.config_digest = Some(sha256_hex(serde_json::to_string(config)?.as_bytes()));
        Ok(())
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn input_opt(&mut self, path: Option<&Path>) {
        if let Some(p) = path {
            self.input(p);
        }
    }

    /// Writes `contents` to `path` and records it.
    pub fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(path);
        Ok(())
    }

    /// Records a file some library call already wrote.
    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn finish(self, dir: &Path) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config_digest: self.config_digest,
            inputs: self.inputs.iter().map(|p| file_digest(p)).collect::<Result<_>>()?,
            outputs: self.outputs.iter().map(|p| file_digest(p)).collect::<Result<_>>()?,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
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
}
