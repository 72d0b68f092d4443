use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Written next to the outputs before any of them.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: &'static str,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut hasher = Sha256::new();
    let mut file = std::fs::File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64, config: Value, inputs: &[&Path], outputs: &[&Path]) -> std::io::Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| Ok(InputHash { path: p.to_path_buf(), sha256: sha256_file(p)? }))
            .collect::<std::io::Result<Vec<_>>>()?;
        Ok(Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            inputs,
            outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")
    }
}

/// `<out>.manifest.json`.
pub fn default_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}
