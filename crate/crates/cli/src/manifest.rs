//! Artifact manifest: every command records the sha256 of what it wrote in
//! `manifest.json`, so a run's outputs can be compared byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::CliError;

pub fn update(out_dir: &Path, artifacts: &[&Path]) -> Result<(), CliError> {
    let manifest_path = out_dir.join("manifest.json");
    let mut entries: BTreeMap<String, String> = match std::fs::read_to_string(&manifest_path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| CliError::domain(format!("corrupt manifest: {e}")))?,
        Err(_) => BTreeMap::new(),
    };
    for artifact in artifacts {
        let bytes = std::fs::read(artifact)
            .map_err(|e| CliError::domain(format!("cannot hash {}: {e}", artifact.display())))?;
        let name = artifact
            .strip_prefix(out_dir)
            .unwrap_or(artifact)
            .to_string_lossy()
            .into_owned();
        entries.insert(name, hex::encode(Sha256::digest(&bytes)));
    }
    let mut text = serde_json::to_string_pretty(&entries)
        .map_err(|e| CliError::domain(e.to_string()))?;
    text.push('\n');
    std::fs::write(&manifest_path, text)
        .map_err(|e| CliError::domain(format!("cannot write manifest: {e}")))?;
    Ok(())
}
