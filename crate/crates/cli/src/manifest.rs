//! Run manifests: every command records what produced its outputs —
//! command line, config hash, input file hashes, seed, thread count, code
//! version, and wall time — so a run can be re-executed exactly.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

pub struct ManifestBuilder {
    command: String,
    seed: u64,
    threads: usize,
    config_hash: String,
    input_hashes: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    started: std::time::Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config_canonical: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            seed: 0,
            threads: 1,
            config_hash: sha256_hex(config_canonical.as_bytes()),
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
            started: std::time::Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = seed;
        self
    }

    pub fn threads(&mut self, threads: usize) -> &mut Self {
        self.threads = threads;
        self
    }

    pub fn input(&mut self, label: &str, path: &Path) -> Result<&mut Self> {
        let bytes =
            std::fs::read(path).with_context(|| format!("reading input {}", path.display()))?;
        self.input_hashes
            .insert(label.to_string(), sha256_hex(&bytes));
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Writes `manifest.json` into the output directory.
    pub fn write(self, out_dir: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            threads: self.threads,
            config_hash: self.config_hash,
            input_hashes: self.input_hashes,
            outputs: self
                .outputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, json + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    format!("sha256:{out}")
}
