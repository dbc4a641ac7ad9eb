//! Training loop with validation-AUROC model selection.

use serde::{Deserialize, Serialize};

use crate::data::{balanced_batches, DataError, Dataset, Split};
use crate::metrics::MetricsReport;
use crate::model::{batch_loss, predict_proba, ForwardOptions, ModelConfig, ModelError, ModelParams};
use crate::rng::SplitMix64;
use crate::tensor::{Adam, AdamConfig, Tape, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (parameter norm {param_norm:.6e})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        param_norm: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Seeds parameter initialization and batch order.
    pub seed: u64,
    /// Equal class counts per batch (binary tasks only).
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 128,
            learning_rate: 1e-4,
            seed: 0,
            balanced: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!("batch size {} below 2", self.batch_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean batch loss.
    pub train_loss: f64,
    pub batches: usize,
    pub val: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the selected epoch.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Epoch whose validation AUROC is highest; missing AUROC ranks lowest and
/// ties go to the earliest epoch.
pub fn select_best(history: &[EpochRecord]) -> Option<usize> {
    let key = |r: &EpochRecord| r.val.auroc.unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<&EpochRecord> = None;
    for r in history {
        if best.is_none_or(|b| key(r) > key(b)) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

/// Metrics of `params` on `indices`.
pub fn evaluate(params: &ModelParams, ds: &Dataset, indices: &[usize]) -> Result<MetricsReport, ModelError> {
    let probs = predict_all(params, ds, indices)?;
    let labels: Vec<usize> = indices.iter().map(|&i| ds.samples[i].label).collect();
    Ok(MetricsReport::from_probs(&probs, &labels, ds.n_classes))
}

pub fn predict_all(params: &ModelParams, ds: &Dataset, indices: &[usize]) -> Result<Vec<Vec<f64>>, ModelError> {
    indices.iter().map(|&i| predict_proba(params, &ds.samples[i])).collect()
}

/// Model configuration matching a dataset's shape, other fields at their defaults.
pub fn config_for(ds: &Dataset) -> ModelConfig {
    ModelConfig::new(ds.n_sensors, ds.n_classes, ds.t_max, ds.attr_dim())
}

/// One optimization step on `batch`; returns the loss.
fn step(params: &mut ModelParams, adam: &mut Adam, ds: &Dataset, batch: &[usize]) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let samples: Vec<_> = batch.iter().map(|&i| &ds.samples[i]).collect();
    let (loss, _, _) = batch_loss(&mut tape, &bound, &params.config, &samples, ForwardOptions::default())?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;
    let grads: Vec<Vec<f64>> = bound
        .vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    adam.step(&mut params.tensors, &grads)?;
    Ok(value)
}

pub fn train(ds: &Dataset, split: &Split, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model.validate()?;
    if model.n_sensors != ds.n_sensors || model.n_classes != ds.n_classes || model.attr_dim != ds.attr_dim() {
        return Err(TrainError::Config(format!(
            "model expects M={}, C={}, attrs={}; dataset has M={}, C={}, attrs={}",
            model.n_sensors,
            model.n_classes,
            model.attr_dim,
            ds.n_sensors,
            ds.n_classes,
            ds.attr_dim()
        )));
    }
    if split.train.is_empty() {
        return Err(TrainError::Config("empty training split".into()));
    }
    let mut params = ModelParams::init(model, cfg.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
        &params.tensors,
    );
    let labels = ds.labels();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelParams, usize)> = None;
    for epoch in 1..=cfg.epochs {
        let batch_seed = SplitMix64::derive(cfg.seed, epoch as u64).next_u64();
        let batches = balanced_batches(&split.train, &labels, cfg.batch_size, batch_seed, cfg.balanced)?;
        let mut total = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let loss = step(&mut params, &mut adam, ds, batch)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: b + 1,
                    loss,
                    param_norm: params.norm(),
                });
            }
            total += loss;
        }
        let val = evaluate(&params, ds, &split.val)?;
        let score = val.auroc.unwrap_or(f64::NEG_INFINITY);
        log::info!(
            "epoch {epoch}: loss {:.5}, val auroc {}, val acc {:.4}",
            total / batches.len() as f64,
            val.auroc.map_or("n/a".into(), |a| format!("{a:.4}")),
            val.accuracy
        );
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, params.clone(), epoch));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: total / batches.len() as f64,
            batches: batches.len(),
            val,
        });
    }
    let (_, params, best_epoch) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        best_epoch,
        history,
    })
}
