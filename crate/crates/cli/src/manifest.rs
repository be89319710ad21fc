//! Sidecar `<artifact>.manifest.json` files tying each output to the inputs
//! and settings that produced it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub corpus_digest: Option<String>,
    /// File name → SHA-256 of the inputs read.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of the artifact itself.
    pub output_sha256: String,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sidecar(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

fn label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl Manifest {
    pub fn new(stage: &str, config_hash: &str, corpus_digest: Option<&str>) -> Self {
        Self {
            stage: stage.to_owned(),
            config_hash: config_hash.to_owned(),
            corpus_digest: corpus_digest.map(str::to_owned),
            inputs: BTreeMap::new(),
            output_sha256: String::new(),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.insert(label(path), file_sha256(path)?);
        Ok(self)
    }

    /// Hashes the finished artifact and writes the sidecar next to it.
    pub fn write_for(mut self, artifact: &Path) -> Result<()> {
        self.output_sha256 = file_sha256(artifact)?;
        let path = sidecar(artifact);
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    /// The sidecar of `artifact`, if there is one.
    pub fn read_for(artifact: &Path) -> Result<Option<Self>> {
        let path = sidecar(artifact);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(serde_json::from_str(&text).map_err(|e| {
                CliError::Integrity(format!("{}: unreadable manifest: {e}", path.display()))
            })?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }

    /// Refuses artifacts produced from another corpus or configuration, or
    /// modified after they were written.
    pub fn check(&self, artifact: &Path, config_hash: &str, corpus_digest: &str) -> Result<()> {
        let name = artifact.display();
        if self.corpus_digest.as_deref().is_some_and(|d| d != corpus_digest) {
            return Err(CliError::Integrity(format!(
                "{name} was produced from a different corpus (digest {} vs {corpus_digest})",
                self.corpus_digest.as_deref().unwrap_or_default()
            )));
        }
        if self.config_hash != config_hash {
            return Err(CliError::Integrity(format!(
                "{name} was produced under a different configuration (hash {} vs {config_hash})",
                self.config_hash
            )));
        }
        self.verify_output(artifact)
    }

    pub fn verify_output(&self, artifact: &Path) -> Result<()> {
        if file_sha256(artifact)? != self.output_sha256 {
            return Err(CliError::Integrity(format!(
                "{} does not match its manifest checksum",
                artifact.display()
            )));
        }
        Ok(())
    }
}
