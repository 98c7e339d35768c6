use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

/// Sidecar written next to every output as `<output>.meta.json`. No
/// timestamps, so reruns on the same inputs are byte-identical.
#[derive(Debug, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub details: Value,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn meta_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    output.with_file_name(name)
}

pub fn read_meta(output: &Path) -> Option<Value> {
    let text = std::fs::read_to_string(meta_path(output)).ok()?;
    serde_json::from_str(&text).ok()
}

pub fn write_meta(
    output: &Path,
    subcommand: &'static str,
    seed: Option<u64>,
    inputs: &[&Path],
    details: Value,
) -> Result<(), Failure> {
    let inputs = inputs
        .iter()
        .map(|p| {
            Ok(InputDigest {
                name: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let meta = Meta { tool: "bikesafe", version: env!("CARGO_PKG_VERSION"), subcommand, seed, inputs, details };
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| Failure::Data(e.to_string()))?;
    text.push('\n');
    write_file(&meta_path(output), text.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}
