use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of one command invocation. `manifest.json` holds a list of
/// these and only ever grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub case: Option<String>,
    pub case_sha256: Option<String>,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
}

pub(super) fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, started: String, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            case: None,
            case_sha256: None,
            seed: None,
            started,
            finished: String::new(),
            outputs: Vec::new(),
        }
    }

    pub fn with_case(mut self, path: &Path) -> Result<Self> {
        self.case = Some(path.display().to_string());
        self.case_sha256 = Some(sha256_file(path)?);
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_outputs(mut self, outputs: Vec<String>) -> Self {
        self.outputs = outputs;
        self
    }

    /// Every record in `dir/manifest.json`; empty if the file is absent.
    pub fn read_all(dir: &Path) -> Result<Vec<RunManifest>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn append_to(mut self, dir: &Path) -> Result<()> {
        let mut all = Self::read_all(dir)?;
        self.finished = now();
        all.push(self);
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&all)?)?;
        Ok(())
    }
}
