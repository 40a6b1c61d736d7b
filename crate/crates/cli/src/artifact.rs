//! Output files: a provenance envelope for JSON, and buffered writing so a
//! failed command leaves nothing behind.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use mortality_core::preprocess::FORMAT_VERSION;
use mortality_core::{Error, Result};

/// Seed and configuration hash stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    /// A `#`-prefixed line for plain-text outputs.
    pub fn text_header(&self) -> String {
        format!(
            "# format_version={} seed={} config_hash={}\n",
            FORMAT_VERSION, self.seed, self.config_hash
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format_version: u32,
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
    pub body: T,
}

pub fn to_json<T: Serialize>(kind: &str, prov: &Provenance, body: &T) -> Result<Vec<u8>> {
    let envelope = Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        seed: prov.seed,
        config_hash: prov.config_hash.clone(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&envelope)?;
    text.push('\n');
    Ok(text.into_bytes())
}

/// Reads an envelope of the given kind, rejecting other format versions.
pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Envelope<T>> {
    if !path.is_file() {
        return Err(Error::Input(format!("{} not found", path.display())));
    }
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::Schema(format!(
            "{}: format_version {version:?}, expected {FORMAT_VERSION}",
            path.display()
        )));
    }
    let found = value.get("kind").and_then(|v| v.as_str()).unwrap_or("");
    if found != kind {
        return Err(Error::Schema(format!("{}: holds `{found}`, expected `{kind}`", path.display())));
    }
    Ok(serde_json::from_value(value)?)
}

/// Files produced by a command, written together once it has succeeded.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}
