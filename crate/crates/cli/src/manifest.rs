//! Output manifest with content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    /// Relative path -> sha256 of contents.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    /// Record a file that lives under `root`.
    pub fn add(&mut self, root: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/");
        self.files.insert(rel, sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, root: &Path) -> Result<PathBuf> {
        let path = root.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    /// Re-hash every listed file and confirm the manifest matches.
    pub fn verify(root: &Path) -> Result<usize> {
        let path = root.join("manifest.json");
        let manifest: Manifest = serde_json::from_str(
            &std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?,
        )?;
        for (rel, expected) in &manifest.files {
            let actual = sha256_file(&root.join(rel))?;
            if &actual != expected {
                bail!("manifest mismatch for {rel}: recorded {expected}, found {actual}");
            }
        }
        Ok(manifest.files.len())
    }
}
