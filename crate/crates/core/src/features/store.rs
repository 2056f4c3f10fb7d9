use std::collections::HashMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{read_layer_stack, ExtractRequest, FeatureBackend, LayerStack};
use crate::error::{Error, Result};
use crate::tsv;

/// Name of the utterance -> file map inside a feature directory.
pub const FEATURE_MANIFEST: &str = "features.tsv";

/// File name for an utterance's stack: a filesystem-safe rendering of the id
/// plus a short digest so distinct ids never collide.
pub fn feature_file_name(utterance_id: &str) -> String {
    let safe: String = utterance_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .take(80)
        .collect();
    let digest = Sha256::digest(utterance_id.as_bytes());
    let tag: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("{safe}-{tag}.lstk")
}

/// Read-only view of a feature directory produced by `extract`.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    dir: PathBuf,
    files: HashMap<String, PathBuf>,
}

impl FeatureStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = dir.join(FEATURE_MANIFEST);
        if !manifest.exists() {
            return Err(Error::Environment(format!(
                "feature directory {} has no {FEATURE_MANIFEST}",
                dir.display()
            )));
        }
        let table = tsv::read(&manifest)?;
        let id_col = table.column("utterance_id", &manifest)?;
        let path_col = table.column("path", &manifest)?;
        let mut files = HashMap::with_capacity(table.rows.len());
        for (row, line) in table.rows.iter().zip(&table.lines) {
            let path = PathBuf::from(&row[path_col]);
            let path = if path.is_absolute() { path } else { dir.join(path) };
            if files.insert(row[id_col].clone(), path).is_some() {
                return Err(Error::format(
                    &manifest,
                    format!("line {line}: duplicate utterance id '{}'", row[id_col]),
                ));
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            files,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn contains(&self, utterance_id: &str) -> bool {
        self.files.contains_key(utterance_id)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn load(&self, utterance_id: &str) -> Result<LayerStack> {
        let path = self.files.get(utterance_id).ok_or_else(|| {
            Error::input(format!(
                "utterance '{utterance_id}' not found in {}",
                self.dir.display()
            ))
        })?;
        let stack = read_layer_stack(path)?;
        if stack.utterance_id() != utterance_id {
            return Err(Error::format(
                path,
                format!(
                    "file holds utterance '{}', manifest says '{utterance_id}'",
                    stack.utterance_id()
                ),
            ));
        }
        Ok(stack)
    }

    /// Write the manifest for `(utterance_id, relative_path)` entries.
    pub fn write_manifest(dir: &Path, entries: &[(String, String)], comments: &[String]) -> Result<()> {
        let rows: Vec<Vec<String>> = entries.iter().map(|(id, p)| vec![id.clone(), p.clone()]).collect();
        tsv::write(&dir.join(FEATURE_MANIFEST), comments, &["utterance_id", "path"], &rows)
    }
}

impl FeatureBackend for FeatureStore {
    fn extract(&self, request: &ExtractRequest<'_>) -> Result<LayerStack> {
        self.load(request.utterance_id)
    }
}
