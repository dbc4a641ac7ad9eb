//! Evaluation settings and the ablation runner.
//!
//! * Setting 1: plain stratified split.
//! * Setting 2: the top-ranked sensors are deleted from validation and test.
//! * Setting 3: a random sensor subset per validation/test sample is zeroed.
//! * Setting 4: train on one attribute group, evaluate on the other.
//!
//! Settings 2 and 3 train once per run on clean data and evaluate every
//! ratio against that model.

use std::io;
use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::data::{
    apply_leaveout, group_split, rank_sensors, split, Dataset, GroupSpec, LeaveOutMode, LeaveOutSpec, Split, SplitSpec,
};
use crate::metrics::{MetricSummary, MetricsReport};
use crate::model::{Ablations, ModelConfig, ModelParams};
use crate::rng::SplitMix64;
use crate::train::{evaluate, train, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub setting: u8,
    /// Missing-sensor ratios for settings 2 and 3.
    pub ratios: Vec<f64>,
    /// Attribute grouping for setting 4.
    pub group: Option<GroupSpec>,
    pub runs: usize,
    /// Run `r` trains with seed `seed + r`.
    pub seed: u64,
    /// Run `r` splits with seed `split_seed + r` when training.
    pub split_seed: u64,
}

impl ExperimentSpec {
    pub fn new(setting: u8) -> Self {
        Self {
            setting,
            ratios: if matches!(setting, 2 | 3) {
                vec![0.1, 0.2, 0.3, 0.4, 0.5]
            } else {
                vec![]
            },
            group: None,
            runs: 5,
            seed: 0,
            split_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(1..=4).contains(&self.setting) {
            return bad(format!("unknown setting {}", self.setting));
        }
        if self.runs == 0 {
            return bad("at least one run is required".into());
        }
        if matches!(self.setting, 2 | 3) {
            if self.ratios.is_empty() {
                return bad(format!("setting {} needs at least one missing ratio", self.setting));
            }
            if let Some(r) = self.ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
                return bad(format!("missing ratio {r} outside [0, 1)"));
            }
        }
        if self.setting == 4 && self.group.is_none() {
            return bad("setting 4 needs a group specification".into());
        }
        Ok(())
    }
}

/// Where the evaluated parameters come from.
#[derive(Debug, Clone, Copy)]
pub enum ModelSource<'a> {
    /// Train a fresh model per run.
    Train {
        model: &'a ModelConfig,
        train: &'a TrainConfig,
    },
    /// Evaluate fixed parameters; every run uses split seed `split_seed` and
    /// only the corruption seed varies.
    Fixed(&'a ModelParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub setting: u8,
    pub ratio: Option<f64>,
    pub run: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: u8,
    pub ratio: Option<f64>,
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub spec: ExperimentSpec,
    /// Ordered by ratio, then run.
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

/// Map `f` over `items` on up to `jobs` threads, preserving order.
pub fn par_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

fn run_split(ds: &Dataset, spec: &ExperimentSpec, run: usize, training: bool) -> Result<Split, TrainError> {
    let offset = if training { run as u64 } else { 0 };
    Ok(match spec.setting {
        4 => {
            let mut g = spec.group.expect("validated");
            g.seed = g.seed.wrapping_add(offset);
            group_split(ds, &g)?
        }
        _ => split(ds, &SplitSpec::new(spec.split_seed.wrapping_add(offset)))?,
    })
}

fn one_run(
    ds: &Dataset,
    spec: &ExperimentSpec,
    source: ModelSource<'_>,
    run: usize,
) -> Result<Vec<ResultRow>, TrainError> {
    let seed = spec.seed.wrapping_add(run as u64);
    let sp = run_split(ds, spec, run, matches!(source, ModelSource::Train { .. }))?;
    let (trained, best_epoch) = match source {
        ModelSource::Train { model, train: tc } => {
            let tc = TrainConfig { seed, ..tc.clone() };
            let out = train(ds, &sp, model, &tc)?;
            (out.params, Some(out.best_epoch))
        }
        ModelSource::Fixed(p) => (p.clone(), None),
    };
    let row = |ratio: Option<f64>, metrics| ResultRow {
        setting: spec.setting,
        ratio,
        run,
        seed,
        best_epoch,
        metrics,
    };
    match spec.setting {
        1 | 4 => Ok(vec![row(None, evaluate(&trained, ds, &sp.test)?)]),
        s => {
            let mode = if s == 2 {
                LeaveOutMode::Fixed
            } else {
                LeaveOutMode::Random
            };
            let ranking = if s == 2 {
                Some(rank_sensors(ds, &sp.train)?.order)
            } else {
                None
            };
            let affected = sp.eval_indices();
            spec.ratios
                .iter()
                .enumerate()
                .map(|(ri, &ratio)| {
                    let lo = LeaveOutSpec {
                        mode,
                        ratio,
                        seed: SplitMix64::derive(seed, ri as u64).next_u64(),
                    };
                    let c = apply_leaveout(ds, &affected, &lo, ranking.as_deref())?;
                    Ok(row(Some(ratio), evaluate(&trained, &c.dataset, &sp.test)?))
                })
                .collect()
        }
    }
}

pub fn run_setting(
    ds: &Dataset,
    spec: &ExperimentSpec,
    source: ModelSource<'_>,
    jobs: usize,
) -> Result<ExperimentTable, TrainError> {
    spec.validate()?;
    if let ModelSource::Fixed(p) = source {
        check_compatible(&p.config, ds)?;
    }
    let runs: Vec<usize> = (0..spec.runs).collect();
    let per_run = par_map(&runs, jobs, |&r| one_run(ds, spec, source, r));
    let per_run: Vec<Vec<ResultRow>> = per_run.into_iter().collect::<Result<_, _>>()?;
    let mut rows: Vec<ResultRow> = per_run.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.ratio
            .unwrap_or(0.0)
            .total_cmp(&b.ratio.unwrap_or(0.0))
            .then(a.run.cmp(&b.run))
    });
    let summary = summarize(&rows);
    Ok(ExperimentTable {
        spec: spec.clone(),
        rows,
        summary,
    })
}

fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let j = rows[i..]
            .iter()
            .position(|r| r.ratio != rows[i].ratio)
            .map_or(rows.len(), |k| i + k);
        let reports: Vec<MetricsReport> = rows[i..j].iter().map(|r| r.metrics.clone()).collect();
        out.push(SummaryRow {
            setting: rows[i].setting,
            ratio: rows[i].ratio,
            summary: MetricSummary::of(&reports),
        });
        i = j;
    }
    out
}

/// Reject parameters whose shape does not fit `ds`.
pub fn check_compatible(cfg: &ModelConfig, ds: &Dataset) -> Result<(), TrainError> {
    if cfg.n_sensors != ds.n_sensors || cfg.n_classes != ds.n_classes || cfg.attr_dim != ds.attr_dim() {
        return Err(TrainError::Config(format!(
            "checkpoint expects M={}, C={}, attrs={}; dataset has M={}, C={}, attrs={}",
            cfg.n_sensors,
            cfg.n_classes,
            cfg.attr_dim,
            ds.n_sensors,
            ds.n_classes,
            ds.attr_dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    /// `full` or the ablation flag.
    pub name: String,
    pub config: ModelConfig,
    pub reports: Vec<MetricsReport>,
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub arms: Vec<AblationArm>,
}

impl AblationTable {
    pub fn arm(&self, name: &str) -> Option<&AblationArm> {
        self.arms.iter().find(|a| a.name == name)
    }
}

/// Train the full model and one model per flag on the same split and seeds
/// (`train.seed + r` for run `r`), reporting test metrics.
pub fn run_ablation(
    ds: &Dataset,
    sp: &Split,
    flags: &[String],
    model: &ModelConfig,
    tc: &TrainConfig,
    runs: usize,
    jobs: usize,
) -> Result<AblationTable, TrainError> {
    if runs == 0 {
        return Err(TrainError::Config("at least one run is required".into()));
    }
    let mut arms = vec![("full".to_string(), model.clone())];
    for f in flags {
        arms.push((f.clone(), model.clone().with_flag(f)?));
    }
    let jobs_list: Vec<(usize, usize)> = (0..arms.len()).flat_map(|a| (0..runs).map(move |r| (a, r))).collect();
    let results = par_map(&jobs_list, jobs, |&(a, r)| {
        let tc = TrainConfig {
            seed: tc.seed.wrapping_add(r as u64),
            ..tc.clone()
        };
        let out = train(ds, sp, &arms[a].1, &tc)?;
        evaluate(&out.params, ds, &sp.test).map_err(TrainError::from)
    });
    let mut results = results.into_iter();
    let mut out = Vec::with_capacity(arms.len());
    for (name, config) in arms {
        let reports = results.by_ref().take(runs).collect::<Result<Vec<_>, _>>()?;
        out.push(AblationArm {
            name,
            config,
            summary: MetricSummary::of(&reports),
            reports,
        });
    }
    Ok(AblationTable { arms: out })
}

/// Every recognised ablation flag.
pub fn ablation_flags() -> Vec<String> {
    Ablations::FLAGS.iter().map(|s| s.to_string()).collect()
}

#[derive(Serialize)]
struct CsvRow<'a> {
    name: &'a str,
    setting: u8,
    ratio: Option<f64>,
    run: usize,
    seed: u64,
    n: usize,
    auroc: Option<f64>,
    auprc: Option<f64>,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

impl<'a> CsvRow<'a> {
    fn new(name: &'a str, setting: u8, ratio: Option<f64>, run: usize, seed: u64, m: &MetricsReport) -> Self {
        Self {
            name,
            setting,
            ratio,
            run,
            seed,
            n: m.n,
            auroc: m.auroc,
            auprc: m.auprc,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// One row per (ratio, run) with every metric.
pub fn write_table_csv(table: &ExperimentTable, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in &table.rows {
        w.serialize(CsvRow::new("raindrop", r.setting, r.ratio, r.run, r.seed, &r.metrics))
            .map_err(csv_err)?;
    }
    w.flush()
}

pub fn write_ablation_csv(table: &AblationTable, seed: u64, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for arm in &table.arms {
        for (r, m) in arm.reports.iter().enumerate() {
            w.serialize(CsvRow::new(&arm.name, 1, None, r, seed.wrapping_add(r as u64), m))
                .map_err(csv_err)?;
        }
    }
    w.flush()
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    std::fs::write(path, text)
}
