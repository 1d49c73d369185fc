use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::csvio::write_json;
use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("IFAM_LAB_VERSION");

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let mut f = File::open(path).map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f
            .read(&mut buf)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

/// Tracks the files a command writes and stamps the manifest last.
pub struct Run {
    started: Instant,
    pub dir: PathBuf,
    outputs: Vec<String>,
}

impl Run {
    pub fn start(cfg: &ExperimentConfig) -> CliResult<Self> {
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Output {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            started: Instant::now(),
            dir,
            outputs: Vec::new(),
        })
    }

    /// Path of an output file, recorded for the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    pub fn finish(self, cfg: &ExperimentConfig) -> CliResult<Manifest> {
        let mut inputs = Vec::new();
        for p in [&cfg.input_csv, &cfg.labels_csv, &cfg.sectors_csv, &cfg.truth_csv]
            .into_iter()
            .flatten()
        {
            inputs.push(InputDigest {
                path: p.clone(),
                sha256: file_sha256(p)?,
            });
        }
        let m = Manifest {
            command: cfg.mode().name().to_string(),
            version: VERSION.to_string(),
            seed: cfg.seed(),
            config_sha256: cfg.canonical_hash(),
            config: cfg.clone(),
            inputs,
            outputs: self.outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_json(&self.dir.join("manifest.json"), &m)?;
        Ok(m)
    }
}
