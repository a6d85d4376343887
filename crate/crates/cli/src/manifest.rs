//! Provenance records written beside every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use agdst::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub config_hash: Option<String>,
    pub corpus_hash: Option<String>,
    /// Input role → (path, SHA-256).
    pub inputs: BTreeMap<String, (String, String)>,
    pub outputs: Vec<String>,
    pub created_unix: u64,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: None,
            corpus_hash: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<&mut Self> {
        let hash = file_hash(path)?;
        if role == "corpus" {
            self.corpus_hash = Some(hash.clone());
        }
        self.inputs.insert(role.to_string(), (path.display().to_string(), hash));
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// `<file>.manifest.json` next to a file output.
pub fn beside(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
