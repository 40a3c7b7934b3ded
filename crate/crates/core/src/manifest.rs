use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::digest::file_sha256;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written once into every output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    /// Input path -> SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Output file name -> SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: command.to_owned(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    /// Digests every regular file already in `dir` and writes the manifest.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name != MANIFEST_FILE && entry.path().is_file() {
                self.outputs.insert(name, file_sha256(entry.path())?);
            }
        }
        self.finished_unix_ms = now_ms();
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
