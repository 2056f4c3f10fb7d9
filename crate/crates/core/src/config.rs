//! Flat `key=value` config files and output provenance.
//!
//! One assignment per line, `#` starts a comment line, blank lines are
//! ignored, keys may appear once. Values are trimmed; no quoting or nesting.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ordered `key -> value` pairs.
pub type KeyValues = BTreeMap<String, String>;

pub fn parse_kv(text: &str, path: &Path) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::format(path, format!("line {}: expected key=value", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::format(path, format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.to_owned(), v.to_owned()).is_some() {
            return Err(Error::format(path, format!("line {}: duplicate key '{k}'", n + 1)));
        }
    }
    Ok(out)
}

pub fn read_kv(path: &Path) -> Result<KeyValues> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kv(&text, path)
}

pub fn render_kv(kv: &KeyValues) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Parse one value, naming the key on failure.
pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value '{value}' for {key}")))
}

/// Traceability record written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub command: String,
    /// Hex sha256 of the canonical rendering of the effective settings.
    pub config_hash: String,
    pub settings: KeyValues,
}

impl Provenance {
    pub fn new(command: &str, settings: KeyValues) -> Self {
        let config_hash = hex(&Sha256::digest(format!("{command}\n{}", render_kv(&settings))));
        Self {
            command: command.to_owned(),
            config_hash,
            settings,
        }
    }

    /// Comment lines (without the leading `#`) for TSV and text outputs.
    pub fn comment_lines(&self) -> Vec<String> {
        let mut v = vec![
            format!("vtad {ARTIFACT_VERSION} {}", self.command),
            format!("config_hash={}", self.config_hash),
        ];
        v.extend(self.settings.iter().map(|(k, v)| format!("{k}={v}")));
        v
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "provenance": {
                "tool": "vtad",
                "version": ARTIFACT_VERSION,
                "command": self.command,
                "config_hash": self.config_hash,
                "settings": self.settings,
            }
        })
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
