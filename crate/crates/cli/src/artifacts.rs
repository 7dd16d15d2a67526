//! Deterministic artifact emission. Every file embeds the configuration
//! hash and the tool version: JSON artifacts as top-level fields, CSV
//! artifacts as a leading comment line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Output sink bound to one run's directory and configuration hash.
pub struct Artifacts {
    dir: PathBuf,
    config_sha256: String,
    written: Vec<String>,
}

#[derive(Serialize)]
struct JsonEnvelope<T: Serialize> {
    config_sha256: String,
    tool_version: &'static str,
    #[serde(flatten)]
    payload: T,
}

impl Artifacts {
    pub fn create(dir: &Path, config_bytes: &[u8]) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_sha256: sha256_hex(config_bytes),
            written: Vec::new(),
        })
    }

    pub fn config_sha256(&self) -> &str {
        &self.config_sha256
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, payload: T) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        let envelope = JsonEnvelope {
            config_sha256: self.config_sha256.clone(),
            tool_version: TOOL_VERSION,
            payload,
        };
        let mut text = serde_json::to_string_pretty(&envelope)
            .map_err(|e| crate::error::CliError::Numerical(format!("serialization: {e}")))?;
        text.push('\n');
        fs::write(&path, text)?;
        self.written.push(name.to_string());
        Ok(path)
    }

    /// Write CSV content produced by `fill`, prefixed with the provenance
    /// comment line.
    pub fn write_csv<F>(&mut self, name: &str, fill: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let path = self.dir.join(name);
        let mut buf = Vec::new();
        use std::io::Write;
        writeln!(
            buf,
            "# config_sha256={} tool_version={}",
            self.config_sha256, TOOL_VERSION
        )?;
        fill(&mut buf)?;
        fs::write(&path, buf)?;
        self.written.push(name.to_string());
        Ok(path)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}
