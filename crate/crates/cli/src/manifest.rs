use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance written next to every report file. Re-running with the same
/// command, flags and inputs reproduces the report bodies byte for byte;
/// only `timestamp` differs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<InputDigest>,
    pub reports: Vec<String>,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, flags: &impl Serialize, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            flags: serde_json::to_value(flags).expect("flags serialize"),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: Vec::new(),
            reports: Vec::new(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    pub fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
    }

    /// Writes `body` to `path` and records it.
    pub fn write_report(&mut self, path: &Path, body: &str) -> Result<(), CliError> {
        fs::write(path, body).map_err(|e| CliError::io(path, e))?;
        self.reports.push(path.display().to_string());
        Ok(())
    }

    /// Writes the manifest as `<stem>.manifest.json` beside `report`.
    pub fn finish(&self, report: &Path) -> Result<PathBuf, CliError> {
        let path = manifest_path(report);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub fn manifest_path(report: &Path) -> PathBuf {
    sibling(report, "", "manifest.json")
}

/// `dir/<stem><suffix>.<ext>` next to `path`.
pub fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".to_string());
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}
