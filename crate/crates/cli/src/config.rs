//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Values override the model
//! and training defaults; `--set key=value` flags override the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use raindrop_core::model::{ModelConfig, Readout};
use raindrop_core::TrainConfig;

use crate::CliError;

/// Every recognised key.
pub const KEYS: &[&str] = &[
    "d_h",
    "d_t",
    "d_r",
    "d_k",
    "d_a",
    "layers",
    "prune_percent",
    "lambda",
    "hidden",
    "readout",
    "mask_concat",
    "disable_edge_weights",
    "disable_receiver_r",
    "disable_time_encoding",
    "disable_intersensor_alpha",
    "disable_temporal_attention",
    "disable_lr",
    "epochs",
    "batch_size",
    "learning_rate",
    "balanced",
    "seed",
    "split_seed",
];

/// Ordered key/value overrides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides(pub BTreeMap<String, String>);

impl Overrides {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut out = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("{origin}:{}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(CliError::usage(format!("{origin}:{}: unknown key `{k}`", i + 1)));
            }
            out.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self(out))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// `key=value` flags.
    pub fn from_flags(flags: &[String]) -> Result<Self, CliError> {
        Self::parse(&flags.join("\n"), "--set")
    }

    /// Later layers win.
    pub fn merge(mut self, other: Overrides) -> Self {
        self.0.extend(other.0);
        self
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    /// Apply to defaults; returns the split seed.
    pub fn apply(&self, model: &mut ModelConfig, train: &mut TrainConfig) -> Result<u64, CliError> {
        let mut split_seed = 0;
        for (k, v) in &self.0 {
            let bad = |e: &dyn std::fmt::Display| CliError::usage(format!("invalid value `{v}` for `{k}`: {e}"));
            macro_rules! num {
                () => {
                    v.parse().map_err(|e| bad(&e))?
                };
            }
            let flag = || -> Result<bool, CliError> {
                match v.as_str() {
                    "true" | "1" | "yes" => Ok(true),
                    "false" | "0" | "no" => Ok(false),
                    _ => Err(bad(&"expected true or false")),
                }
            };
            let a = &mut model.ablations;
            match k.as_str() {
                "d_h" => model.d_h = num!(),
                "d_t" => model.d_t = num!(),
                "d_r" => model.d_r = num!(),
                "d_k" => model.d_k = num!(),
                "d_a" => model.d_a = num!(),
                "layers" => model.layers = num!(),
                "prune_percent" => model.prune_percent = num!(),
                "lambda" => model.lambda = num!(),
                "hidden" => model.hidden = num!(),
                "readout" => {
                    model.readout = match v.as_str() {
                        "concat" => Readout::Concat,
                        "mean" => Readout::Mean,
                        _ => return Err(bad(&"expected concat or mean")),
                    }
                }
                "mask_concat" => model.mask_concat = flag()?,
                "disable_edge_weights" => a.disable_edge_weights = flag()?,
                "disable_receiver_r" => a.disable_receiver_r = flag()?,
                "disable_time_encoding" => a.disable_time_encoding = flag()?,
                "disable_intersensor_alpha" => a.disable_intersensor_alpha = flag()?,
                "disable_temporal_attention" => a.disable_temporal_attention = flag()?,
                "disable_lr" => a.disable_lr = flag()?,
                "epochs" => train.epochs = num!(),
                "batch_size" => train.batch_size = num!(),
                "learning_rate" => train.learning_rate = num!(),
                "balanced" => train.balanced = flag()?,
                "seed" => train.seed = num!(),
                "split_seed" => split_seed = num!(),
                _ => unreachable!("keys validated on parse"),
            }
        }
        model.validate().map_err(|e| CliError::usage(e.to_string()))?;
        train.validate().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(split_seed)
    }
}
