use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::Cli;

/// SHA-256 of a file, or of every regular file in a directory keyed by name.
pub fn hash_input(path: &Path) -> Result<Value> {
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("reading {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        let mut out = serde_json::Map::new();
        for p in names {
            let name = p.file_name().expect("file name").to_string_lossy().into_owned();
            out.insert(name, Value::String(file_hash(&p)?));
        }
        Ok(Value::Object(out))
    } else {
        Ok(Value::String(file_hash(path)?))
    }
}

fn file_hash(p: &Path) -> Result<String> {
    let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Writes `run.json` into `dir`: tool version, seed, parsed flags, the
/// effective settings and input hashes.
pub fn write_run_json(dir: &Path, cli: &Cli, effective: impl Serialize, inputs: &[&Path]) -> Result<()> {
    let mut hashes = serde_json::Map::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), hash_input(p)?);
    }
    let doc = json!({
        "tool": "mvenhance",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cli.seed,
        "threads": cli.threads,
        "flags": cli,
        "effective": effective,
        "inputs": hashes,
    });
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").with_context(|| format!("writing {}", path.display()))
}
