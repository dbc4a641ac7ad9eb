//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use raindrop_core::data::synth::SynthConfig;
use raindrop_core::data::{load_jsonl, oracle_accuracy, save_jsonl, split, synth_generate, DataError};
use raindrop_core::data::{GroupRule, GroupSpec};
use raindrop_core::experiment::{
    ablation_flags, run_ablation, run_setting, write_ablation_csv, write_json, write_table_csv, ExperimentSpec,
    ModelSource,
};
use raindrop_core::gradcheck::{desk_config, grad_check};
use raindrop_core::graph_export::{
    class_average, differential, export_dot, export_json, intra_inter_distance, snapshot_graphs, GraphError,
};
use raindrop_core::metrics::MetricSummary;
use raindrop_core::model::{load_checkpoint, save_checkpoint, ModelError};
use raindrop_core::train::{config_for, evaluate, train as fit, EpochRecord};
use raindrop_core::{Dataset, ModelConfig, SplitSpec, TrainConfig, TrainError};

use crate::config::Overrides;
use crate::manifest::{sha256_files, RunManifest, TOOL};
use crate::{AblationArgs, CliError, ConfigArgs, EvalArgs, ExportArgs, GradcheckArgs, SynthArgs, TrainArgs};

pub const DATA_FILE: &str = "data.jsonl";
pub const HEADER_FILE: &str = "header.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Data(_) => CliError::Usage(e.to_string()),
            TrainError::Model(ModelError::Config(_) | ModelError::Sample { .. }) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Checkpoint(_) | ModelError::Io { .. } | ModelError::Config(_) | ModelError::Sample { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Model(m) => m.into(),
            GraphError::Invalid(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

fn out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// Manifests record absolute paths so they replay from any directory.
fn absolute(p: Option<&PathBuf>) -> Result<PathBuf, CliError> {
    let p = p.expect("required by clap");
    fs::canonicalize(p).map_err(|e| CliError::usage(format!("cannot open {}: {e}", p.display())))
}

fn load(data: &Path, header: &Path) -> Result<Dataset, CliError> {
    Ok(load_jsonl(data, header)?)
}

/// Defaults for `ds`, then the config file, then `--set`, then dedicated flags.
fn resolve(ds: &Dataset, args: &ConfigArgs) -> Result<(ModelConfig, TrainConfig, u64), CliError> {
    let mut layers = match &args.config {
        Some(p) => Overrides::load(p)?,
        None => Overrides::default(),
    };
    layers = layers.merge(Overrides::from_flags(&args.set)?);
    if let Some(s) = args.seed {
        layers.insert("seed", s);
    }
    if let Some(s) = args.split_seed {
        layers.insert("split_seed", s);
    }
    let mut model = config_for(ds);
    let mut train = TrainConfig::default();
    let split_seed = layers.apply(&mut model, &mut train)?;
    Ok((model, train, split_seed))
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = SynthConfig::new(a.m, a.n, a.obs, a.drop, a.seed);
    cfg.with_age = a.with_age;
    let ds = synth_generate(&cfg)?;
    let dir = &a.out.out;
    out_dir(dir)?;
    let (data, header) = (dir.join(DATA_FILE), dir.join(HEADER_FILE));
    save_jsonl(&ds, &data, &header).map_err(|e| CliError::Runtime(e.into()))?;
    let oracle = oracle_accuracy(&ds, 0)?;
    let events: usize = ds.samples.iter().map(|s| s.events.len()).sum();
    println!("wrote {} samples ({events} events) to {}", ds.len(), data.display());
    println!("oracle accuracy {oracle:.4}");
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    epoch: usize,
    train_loss: f64,
    batches: usize,
    val_auroc: Option<f64>,
    val_auprc: Option<f64>,
    val_accuracy: f64,
    val_f1: f64,
}

fn write_history(history: &[EpochRecord], path: &Path) -> Result<(), CliError> {
    let write = || -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        for r in history {
            w.serialize(HistoryRow {
                epoch: r.epoch,
                train_loss: r.train_loss,
                batches: r.batches,
                val_auroc: r.val.auroc,
                val_auprc: r.val.auprc,
                val_accuracy: r.val.accuracy,
                val_f1: r.val.f1,
            })?;
        }
        w.flush()?;
        Ok(())
    };
    write().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let dir = &a.out.out;
    let manifest = match &a.from_manifest {
        Some(path) => {
            let m = RunManifest::read(path)?;
            let now = sha256_files(&[&m.data, &m.header])?;
            if now != m.fingerprint {
                return Err(CliError::usage(format!(
                    "dataset fingerprint {now} differs from the manifest's {}",
                    m.fingerprint
                )));
            }
            m
        }
        None => {
            let (data, header) = (absolute(a.data.as_ref())?, absolute(a.header.as_ref())?);
            let ds = load(&data, &header)?;
            let (model, train, split_seed) = resolve(&ds, &a.config)?;
            RunManifest {
                tool: TOOL.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: "train".into(),
                fingerprint: sha256_files(&[&data, &header])?,
                data,
                header,
                model,
                train,
                split_seed,
                artifacts: vec![],
            }
        }
    };
    let ds = load(&manifest.data, &manifest.header)?;
    let sp = split(&ds, &SplitSpec::new(manifest.split_seed))?;
    out_dir(dir)?;
    let files: Vec<PathBuf> = [CHECKPOINT_FILE, HISTORY_FILE, MANIFEST_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let manifest = RunManifest {
        artifacts: files.clone(),
        ..manifest
    };
    manifest.write(&files[2])?;
    let out = fit(&ds, &sp, &manifest.model, &manifest.train)?;
    save_checkpoint(&out.params, &files[0]).map_err(|e| CliError::Runtime(e.into()))?;
    write_history(&out.history, &files[1])?;
    let test = evaluate(&out.params, &ds, &sp.test)?;
    println!(
        "best epoch {} of {}; test accuracy {:.4}, auroc {}",
        out.best_epoch,
        out.history.len(),
        test.accuracy,
        test.auroc.map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    println!("checkpoint {}", files[0].display());
    Ok(())
}

fn group_spec(a: &EvalArgs, seed: u64) -> Result<Option<GroupSpec>, CliError> {
    if a.setting != 4 {
        return Ok(None);
    }
    let attr_index = a
        .group_attr
        .ok_or_else(|| CliError::usage("setting 4 needs --group-attr"))?;
    let rule = match (a.group_below, a.group_equals) {
        (Some(t), None) => GroupRule::Below(t),
        (None, Some(c)) => GroupRule::Equals(c),
        _ => return Err(CliError::usage("setting 4 needs --group-below or --group-equals")),
    };
    Ok(Some(GroupSpec {
        attr_index,
        rule,
        invert: a.group_invert,
        seed,
    }))
}

fn fmt_summary(s: &MetricSummary) -> String {
    let f = |m: Option<raindrop_core::metrics::MeanStd>| {
        m.map_or("n/a".into(), |m| format!("{:.4} ± {:.4}", m.mean, m.std))
    };
    format!(
        "auroc {}, auprc {}, accuracy {}, f1 {}",
        f(s.auroc),
        f(s.auprc),
        f(s.accuracy),
        f(s.f1)
    )
}

pub fn eval(a: &EvalArgs, jobs: usize) -> Result<(), CliError> {
    let ds = load(&a.data.data, &a.data.header)?;
    let (model, tc, split_seed) = resolve(&ds, &a.config)?;
    let mut spec = ExperimentSpec::new(a.setting);
    if let Some(r) = &a.ratios {
        spec.ratios = r.clone();
    }
    spec.runs = a.runs;
    spec.seed = tc.seed;
    spec.split_seed = split_seed;
    spec.group = group_spec(a, split_seed)?;
    let params = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let source = match &params {
        Some(p) => ModelSource::Fixed(p),
        None => ModelSource::Train {
            model: &model,
            train: &tc,
        },
    };
    let table = run_setting(&ds, &spec, source, jobs)?;
    let dir = &a.out.out;
    out_dir(dir)?;
    let csv = dir.join(format!("eval_setting{}.csv", a.setting));
    let json = dir.join(format!("eval_setting{}.json", a.setting));
    write_table_csv(&table, &csv).with_context(|| format!("writing {}", csv.display()))?;
    write_json(&table, &json).with_context(|| format!("writing {}", json.display()))?;
    for s in &table.summary {
        let ratio = s.ratio.map_or(String::new(), |r| format!(" ratio {r}"));
        println!("setting {}{ratio}: {}", s.setting, fmt_summary(&s.summary));
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), CliError> {
    let mut cfg = desk_config();
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    cfg.validate()?;
    let report = grad_check(&cfg, a.seed)?;
    if let Some(p) = &a.report {
        write_json(&report, p).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{}", report.summary_line());
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Failed("gradient check failed".into()))
    }
}

#[derive(Serialize)]
struct DiffRow<'a> {
    rank: usize,
    src: &'a str,
    dst: &'a str,
    pos: f64,
    neg: f64,
    diff: f64,
}

pub fn export_graph(a: &ExportArgs) -> Result<(), CliError> {
    let params = load_checkpoint(&a.checkpoint)?;
    let ds = load(&a.data.data, &a.data.header)?;
    raindrop_core::experiment::check_compatible(&params.config, &ds)?;
    let classes: Vec<usize> = if a.class == "all" {
        (0..ds.n_classes).collect()
    } else {
        let c: usize = a
            .class
            .parse()
            .map_err(|_| CliError::usage(format!("--class must be a class index or `all`, got `{}`", a.class)))?;
        if c >= ds.n_classes {
            return Err(CliError::usage(format!("class {c} outside 0..{}", ds.n_classes)));
        }
        vec![c]
    };
    let all: Vec<usize> = (0..ds.len()).collect();
    let snaps = snapshot_graphs(&params, &ds, &all)?;
    let names: Vec<String> = (0..ds.n_sensors).map(|u| ds.sensor_name(u)).collect();
    let dir = &a.out.out;
    out_dir(dir)?;
    let mut avgs = Vec::new();
    for &c in &classes {
        let avg = class_average(&snaps, c, a.threshold)?;
        export_dot(&avg, Some(&names), &dir.join(format!("class{c}.dot")))?;
        export_json(&avg, Some(&names), &dir.join(format!("class{c}.json")))?;
        println!(
            "class {c}: {} edges above {}",
            avg.iter().filter(|&&w| w > 0.0).count(),
            a.threshold
        );
        avgs.push(avg);
    }
    if a.class == "all" && ds.n_classes == 2 {
        let diff = differential(&avgs[1], &avgs[0], ds.n_sensors, a.top)?;
        let path = dir.join("differential.csv");
        let write = || -> Result<(), csv::Error> {
            let mut w = csv::Writer::from_path(&path)?;
            for (i, e) in diff.iter().enumerate() {
                w.serialize(DiffRow {
                    rank: i + 1,
                    src: &names[e.src],
                    dst: &names[e.dst],
                    pos: e.pos,
                    neg: e.neg,
                    diff: e.diff,
                })?;
            }
            w.flush()?;
            Ok(())
        };
        write().with_context(|| format!("writing {}", path.display()))?;
        println!("differential: {} edges", diff.len());
        let per_class = (0..2)
            .map(|c| snaps.iter().filter(|s| s.label == c).count())
            .min()
            .unwrap_or(0);
        let report = intra_inter_distance(&snaps, per_class, a.seed, a.repeats)?;
        let path = dir.join("distances.json");
        write_json(&report, &path).with_context(|| format!("writing {}", path.display()))?;
        println!(
            "graph distance: intra {:.4e} ± {:.4e}, inter {:.4e} ± {:.4e}",
            report.intra.mean, report.intra.std, report.inter.mean, report.inter.std
        );
    }
    Ok(())
}

pub fn ablation(a: &AblationArgs, jobs: usize) -> Result<(), CliError> {
    let ds = load(&a.data.data, &a.data.header)?;
    let (model, tc, split_seed) = resolve(&ds, &a.config)?;
    let flags = a.flags.clone().unwrap_or_else(ablation_flags);
    let sp = split(&ds, &SplitSpec::new(split_seed))?;
    let table = run_ablation(&ds, &sp, &flags, &model, &tc, a.runs, jobs)?;
    let dir = &a.out.out;
    out_dir(dir)?;
    let csv = dir.join("ablation.csv");
    let json = dir.join("ablation.json");
    write_ablation_csv(&table, tc.seed, &csv).with_context(|| format!("writing {}", csv.display()))?;
    write_json(&table, &json).with_context(|| format!("writing {}", json.display()))?;
    for arm in &table.arms {
        let acc: Vec<f64> = arm.reports.iter().map(|r| r.accuracy).collect();
        println!(
            "{:<28} median accuracy {:.4}; {}",
            arm.name,
            raindrop_core::metrics::median(&acc),
            fmt_summary(&arm.summary)
        );
    }
    Ok(())
}
