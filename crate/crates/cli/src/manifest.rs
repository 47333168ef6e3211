//! Run manifests: what a command was given and what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

/// `v<crate version>-g<commit>[-dirty]`, or `v<crate version>` outside git.
pub const VERSION: &str = env!("AFD_VERSION");
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    /// For a directory: digest over `(relative path, file digest)` pairs in
    /// sorted order.
    pub sha256: String,
    pub files: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        Self {
            command: command.to_string(),
            args: args.to_vec(),
            version: VERSION.to_string(),
            seed: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        self.inputs.push(hash_path(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Writes `run.json` into `dir`.
    pub fn write_into(&mut self, dir: &Path) -> Result<PathBuf, Failure> {
        self.write_to(&dir.join(RUN_FILE))
    }

    pub fn write_to(&mut self, path: &Path) -> Result<PathBuf, Failure> {
        self.outputs.sort();
        self.outputs.dedup();
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path.to_path_buf())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
    for e in fs::read_dir(dir)? {
        let path = e?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            out.push((rel, path));
        }
    }
    Ok(())
}

/// Digest of a file, or of every file below a directory (`run.json` excluded).
pub fn hash_path(path: &Path) -> Result<InputHash, Failure> {
    let shown = path.display().to_string();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.retain(|(rel, _)| rel != RUN_FILE);
        files.sort();
        let mut h = Sha256::new();
        for (rel, p) in &files {
            h.update(rel.as_bytes());
            h.update([0]);
            h.update(sha256_hex(&fs::read(p)?).as_bytes());
            h.update(*b"\n");
        }
        Ok(InputHash {
            path: shown,
            sha256: hex::encode(h.finalize()),
            files: files.len(),
        })
    } else {
        let bytes = fs::read(path).map_err(|e| Failure::Data(format!("{shown}: {e}")))?;
        Ok(InputHash {
            path: shown,
            sha256: sha256_hex(&bytes),
            files: 1,
        })
    }
}
