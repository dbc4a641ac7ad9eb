use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, ModelParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "raindrop-checkpoint/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// On-disk form of [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params(p: &ModelParams) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            config: p.config.clone(),
            seed: p.seed,
            params: p
                .names
                .iter()
                .zip(&p.tensors)
                .map(|(n, t)| NamedTensor {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_params(self) -> Result<ModelParams, ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                self.format
            )));
        }
        let named = self
            .params
            .into_iter()
            .map(|nt| {
                let t = Tensor::new(nt.shape, nt.values)
                    .map_err(|e| ModelError::Checkpoint(format!("tensor `{}`: {e}", nt.name)))?;
                Ok((nt.name, t))
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        ModelParams::from_parts(self.config, self.seed, named)
    }
}

pub fn save_checkpoint(p: &ModelParams, path: &Path) -> Result<(), ModelError> {
    let text = serde_json::to_string(&Checkpoint::from_params(p)).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    fs::write(path, text).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    ck.into_params()
}
