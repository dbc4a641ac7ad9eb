//! Central finite-difference check of every parameter gradient of the full
//! loss (cross-entropy plus graph regularizer).

use serde::Serialize;

use crate::data::{ObservationEvent, SampleRecord};
use crate::metrics::median;
use crate::model::{batch_loss, ForwardOptions, ModelConfig, ModelError, ModelParams};
use crate::rng::SplitMix64;
use crate::tensor::Tape;

/// Pass thresholds on relative error.
pub const MAX_REL_TOL: f64 = 1e-3;
pub const MEDIAN_REL_TOL: f64 = 1e-5;
/// Below this magnitude on both sides an element counts as agreeing.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub len: usize,
    pub max_rel: f64,
    pub median_rel: f64,
    /// Element with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub lambda: f64,
    pub params: Vec<ParamCheck>,
    pub max_rel: f64,
    pub median_rel: f64,
    /// `name[index]` of the worst element overall.
    pub worst: String,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn summary_line(&self) -> String {
        format!(
            "{} max rel. err {:.3e} (worst {}), median {:.3e}, {} parameters",
            if self.passed { "PASS" } else { "FAIL" },
            self.max_rel,
            self.worst,
            self.median_rel,
            self.params.iter().map(|p| p.len).sum::<usize>()
        )
    }
}

/// Desk configuration: five sensors, up to eight timestamps, two static
/// attributes, two classes.
pub fn desk_config() -> ModelConfig {
    ModelConfig::new(5, 2, 8, 2)
}

/// Two samples of three readings each. The first has readings on three
/// sensors at distinct times so some edges survive pruning and carry traffic
/// in layer 2; the second has two simultaneous readings so receivers get
/// several senders and the group softmax is exercised.
pub fn desk_samples(cfg: &ModelConfig, seed: u64) -> Vec<SampleRecord> {
    let mut rng = SplitMix64::derive(seed, 0x6772_6164);
    let m = cfg.n_sensors;
    let attrs = |rng: &mut SplitMix64| (0..cfg.attr_dim).map(|_| rng.normal()).collect::<Vec<_>>();
    let t0 = rng.uniform(0.0, 1.0);
    let a = vec![
        ObservationEvent {
            sensor: 0,
            time: t0,
            value: rng.normal(),
        },
        ObservationEvent {
            sensor: 1 % m,
            time: t0 + rng.uniform(0.5, 1.5),
            value: rng.normal(),
        },
        ObservationEvent {
            sensor: 2 % m,
            time: t0 + rng.uniform(2.0, 3.0),
            value: rng.normal(),
        },
    ];
    let t1 = rng.uniform(0.0, 1.0);
    let b = vec![
        ObservationEvent {
            sensor: 0,
            time: t1,
            value: rng.normal(),
        },
        ObservationEvent {
            sensor: 1 % m,
            time: t1,
            value: rng.normal(),
        },
        ObservationEvent {
            sensor: 3 % m,
            time: t1 + rng.uniform(0.5, 1.5),
            value: rng.normal(),
        },
    ];
    vec![
        SampleRecord {
            id: "gc0".into(),
            events: a,
            static_attrs: attrs(&mut rng),
            label: 0,
        },
        SampleRecord {
            id: "gc1".into(),
            events: b,
            static_attrs: attrs(&mut rng),
            label: 1 % cfg.n_classes,
        },
    ]
}

/// Loss of `samples` under frozen `params`.
pub fn loss_value(params: &ModelParams, samples: &[SampleRecord]) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let refs: Vec<&SampleRecord> = samples.iter().collect();
    let (loss, _, _) = batch_loss(&mut tape, &p, &params.config, &refs, ForwardOptions::default())?;
    Ok(tape.value(loss).data()[0])
}

/// Loss and tape gradients for every parameter tensor.
pub fn analytic_grads(params: &ModelParams, samples: &[SampleRecord]) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, true);
    let refs: Vec<&SampleRecord> = samples.iter().collect();
    let (loss, _, _) = batch_loss(&mut tape, &p, &params.config, &refs, ForwardOptions::default())?;
    tape.backward(loss)?;
    let grads = p
        .vars
        .iter()
        .zip(&params.tensors)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    Ok((tape.value(loss).data()[0], grads))
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale < ABS_FLOOR {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

/// Run the check with the tape's gradients.
pub fn grad_check(cfg: &ModelConfig, seed: u64) -> Result<GradCheckReport, ModelError> {
    grad_check_with(cfg, seed, analytic_grads)
}

/// Run the check against an arbitrary gradient provider (for negative
/// controls).
pub fn grad_check_with<F>(cfg: &ModelConfig, seed: u64, grads_fn: F) -> Result<GradCheckReport, ModelError>
where
    F: Fn(&ModelParams, &[SampleRecord]) -> Result<(f64, Vec<Vec<f64>>), ModelError>,
{
    let params = ModelParams::init(cfg, seed)?;
    let samples = desk_samples(cfg, seed);
    let (_, analytic) = grads_fn(&params, &samples)?;
    let mut work = params.clone();
    let mut all = Vec::new();
    let mut checks = Vec::with_capacity(params.tensors.len());
    for (ti, name) in params.names.iter().enumerate() {
        let n = params.tensors[ti].len();
        let mut errs = Vec::with_capacity(n);
        let (mut worst, mut worst_i, mut worst_a, mut worst_n) = (-1.0, 0, 0.0, 0.0);
        for j in 0..n {
            let theta = params.tensors[ti].data()[j];
            let h = 1e-4 * theta.abs().max(1.0);
            work.tensors[ti].data_mut()[j] = theta + h;
            let up = loss_value(&work, &samples)?;
            work.tensors[ti].data_mut()[j] = theta - h;
            let down = loss_value(&work, &samples)?;
            work.tensors[ti].data_mut()[j] = theta;
            let num = (up - down) / (2.0 * h);
            let an = analytic[ti][j];
            let e = rel_error(an, num);
            if e > worst {
                (worst, worst_i, worst_a, worst_n) = (e, j, an, num);
            }
            errs.push(e);
        }
        all.extend_from_slice(&errs);
        checks.push(ParamCheck {
            name: name.clone(),
            len: n,
            max_rel: worst.max(0.0),
            median_rel: median(&errs),
            worst_index: worst_i,
            analytic: worst_a,
            numeric: worst_n,
        });
    }
    let worst = checks
        .iter()
        .max_by(|a, b| a.max_rel.total_cmp(&b.max_rel))
        .map(|c| format!("{}[{}]", c.name, c.worst_index))
        .unwrap_or_default();
    let max_rel = checks.iter().map(|c| c.max_rel).fold(0.0, f64::max);
    let median_rel = median(&all);
    Ok(GradCheckReport {
        seed,
        lambda: cfg.effective_lambda(),
        passed: max_rel <= MAX_REL_TOL && median_rel <= MEDIAN_REL_TOL,
        params: checks,
        max_rel,
        median_rel,
        worst,
    })
}
