use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "MANIFEST.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Complete,
    Failed,
}

/// Digest of every artifact in a run directory and whether the run finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub state: RunState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Path relative to the run directory, `/`-separated, to SHA-256 hex.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Every regular file under `root` except the manifest, sorted.
pub fn list_files(root: &Path) -> Result<Vec<String>, CliError> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), CliError> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| io_err(dir, e)))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).expect("walked path lies under root");
                let rel: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
                out.push(rel.join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.retain(|p| p != MANIFEST_FILE);
    out.sort();
    Ok(out)
}

/// Digests everything currently under `root` and writes the manifest.
pub fn write_manifest(root: &Path, state: RunState, error: Option<String>) -> Result<Manifest, CliError> {
    let mut files = BTreeMap::new();
    for rel in list_files(root)? {
        let path = root.join(&rel);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        files.insert(rel, sha256_hex(&bytes));
    }
    let manifest = Manifest { state, error, files };
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest, CliError> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Problems found when re-digesting a run directory; empty when it verifies.
pub fn check(root: &Path) -> Result<Vec<String>, CliError> {
    let manifest = read_manifest(root)?;
    let mut problems = Vec::new();
    if manifest.state != RunState::Complete {
        problems.push(format!(
            "run did not complete: {}",
            manifest.error.as_deref().unwrap_or("no error recorded")
        ));
    }
    for (rel, want) in &manifest.files {
        match fs::read(root.join(rel)) {
            Ok(bytes) if sha256_hex(&bytes) == *want => {}
            Ok(_) => problems.push(format!("{rel}: digest mismatch")),
            Err(e) => problems.push(format!("{rel}: {e}")),
        }
    }
    for rel in list_files(root)? {
        if !manifest.files.contains_key(&rel) {
            problems.push(format!("{rel}: not listed in manifest"));
        }
    }
    Ok(problems)
}
