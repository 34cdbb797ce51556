//! Run manifests.
//!
//! Every command writes exactly one `manifest.json` into its output
//! directory: the verbatim config, content hashes of every input file, the
//! dataset's time bounds, the seed, and the produced artifacts. Identical
//! inputs and seed yield byte-identical manifests, so a rerun can be checked
//! by hashing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct DataRange {
    pub n_tickers: usize,
    pub n_dates: usize,
    pub first_date: String,
    pub last_date: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config_text: String,
    /// Input path (as given) -> sha256 of its bytes, sorted by path.
    pub inputs: BTreeMap<String, String>,
    /// Time bounds of the data actually consumed.
    pub timestamps: Option<DataRange>,
    pub outputs: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let mut file =
        File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_text: &str) -> Self {
        Self {
            artifact: "tgf",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config_sha256: sha256_hex(config_text.as_bytes()),
            config_text: config_text.to_string(),
            inputs: BTreeMap::new(),
            timestamps: None,
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn add_input_dir(&mut self, dir: &Path, extension: &str) -> Result<()> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == extension).unwrap_or(false))
            .collect();
        paths.sort();
        for p in &paths {
            self.add_input(p)?;
        }
        Ok(())
    }

    pub fn set_data_range(
        &mut self,
        n_tickers: usize,
        n_dates: usize,
        first: chrono::NaiveDate,
        last: chrono::NaiveDate,
    ) {
        self.timestamps = Some(DataRange {
            n_tickers,
            n_dates,
            first_date: first.format("%Y-%m-%d").to_string(),
            last_date: last.format("%Y-%m-%d").to_string(),
        });
    }

    pub fn add_output(&mut self, rel: &str) {
        self.outputs.push(rel.to_string());
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(out_dir.join("manifest.json"), body + "\n")?;
        Ok(())
    }
}
