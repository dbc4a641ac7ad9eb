use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use raindrop_core::{ModelConfig, TrainConfig};

use crate::CliError;

pub const TOOL: &str = "raindrop";

/// Everything needed to rerun a training command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub data: PathBuf,
    pub header: PathBuf,
    /// sha256 over the data file followed by the header file.
    pub fingerprint: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split_seed: u64,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(e.into()))?;
        fs::write(path, text).map_err(|e| CliError::Runtime(anyhow::anyhow!("writing {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("malformed manifest {}: {e}", path.display())))
    }
}

pub fn sha256_files(paths: &[&Path]) -> Result<String, CliError> {
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    for p in paths {
        let mut f = fs::File::open(p).map_err(|e| CliError::usage(format!("cannot open {}: {e}", p.display())))?;
        loop {
            let n = f
                .read(&mut buf)
                .map_err(|e| CliError::Runtime(anyhow::anyhow!("reading {}: {e}", p.display())))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
    }
    Ok(hex::encode(h.finalize()))
}
