//! Learned sensor graphs: per-sample snapshots, class averages, differential
//! edges, intra/inter-class distances and DOT/JSON export.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::metrics::MeanStd;
use crate::model::{inspect, ModelError, ModelParams};
use crate::rng::SplitMix64;

/// Default cut-off for averaged edges.
pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_TOP: usize = 50;
pub const DEFAULT_REPEATS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed graph file {path}: {msg}")]
    Parse { path: String, msg: String },
}

/// Final-layer edge weights of one sample (row-major `M × M`, pruned = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub id: String,
    pub label: usize,
    pub n_sensors: usize,
    pub weights: Vec<f64>,
}

pub fn snapshot_graphs(
    params: &ModelParams,
    ds: &Dataset,
    indices: &[usize],
) -> Result<Vec<GraphSnapshot>, GraphError> {
    indices
        .iter()
        .map(|&i| {
            let s = &ds.samples[i];
            let (_, trace) = inspect(params, s)?;
            let g = trace.graphs.last().expect("initial graph always recorded");
            Ok(GraphSnapshot {
                id: s.id.clone(),
                label: s.label,
                n_sensors: g.n_sensors,
                weights: g.weights.clone(),
            })
        })
        .collect()
}

/// Elementwise mean over snapshots of `class`; entries below `threshold`
/// are zeroed afterwards.
pub fn class_average(snaps: &[GraphSnapshot], class: usize, threshold: f64) -> Result<Vec<f64>, GraphError> {
    let members: Vec<&GraphSnapshot> = snaps.iter().filter(|s| s.label == class).collect();
    let first = members
        .first()
        .ok_or_else(|| GraphError::Invalid(format!("no snapshots of class {class}")))?;
    let len = first.weights.len();
    if members.iter().any(|s| s.weights.len() != len) {
        return Err(GraphError::Invalid("snapshots of different sizes".into()));
    }
    let mut avg = vec![0.0; len];
    for s in &members {
        for (a, w) in avg.iter_mut().zip(&s.weights) {
            *a += w;
        }
    }
    let n = members.len() as f64;
    for a in &mut avg {
        *a /= n;
        if *a < threshold {
            *a = 0.0;
        }
    }
    Ok(avg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEdge {
    pub src: usize,
    pub dst: usize,
    pub pos: f64,
    pub neg: f64,
    /// `pos − neg`
    pub diff: f64,
}

/// Off-diagonal edges ranked by `|pos − neg|`, largest first, ties by
/// `(src, dst)`.
pub fn differential(pos: &[f64], neg: &[f64], n_sensors: usize, top: usize) -> Result<Vec<DiffEdge>, GraphError> {
    let m = n_sensors;
    if pos.len() != m * m || neg.len() != m * m {
        return Err(GraphError::Invalid(format!(
            "matrices of length {} and {} for M = {m}",
            pos.len(),
            neg.len()
        )));
    }
    let mut edges: Vec<DiffEdge> = (0..m * m)
        .filter(|i| i / m != i % m)
        .map(|i| DiffEdge {
            src: i / m,
            dst: i % m,
            pos: pos[i],
            neg: neg[i],
            diff: pos[i] - neg[i],
        })
        .collect();
    edges.sort_by(|a, b| {
        b.diff
            .abs()
            .total_cmp(&a.diff.abs())
            .then((a.src, a.dst).cmp(&(b.src, b.dst)))
    });
    edges.truncate(top);
    Ok(edges)
}

pub fn frobenius(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub intra: MeanStd,
    pub inter: MeanStd,
    pub repeats: usize,
    pub per_class: usize,
}

/// Mean graph distance to same-class and other-class graphs.
///
/// Each repeat draws `per_class` snapshots of each of the two classes with
/// replacement. Every drawn graph contributes its mean distance to the other
/// draws of its class (intra) and to the draws of the other class (inter);
/// a repeat reports the mean over drawn graphs.
pub fn intra_inter_distance(
    snaps: &[GraphSnapshot],
    per_class: usize,
    seed: u64,
    repeats: usize,
) -> Result<DistanceReport, GraphError> {
    let mut classes: Vec<usize> = snaps.iter().map(|s| s.label).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() != 2 {
        return Err(GraphError::Invalid(format!(
            "distance report needs snapshots of exactly two classes, got {}",
            classes.len()
        )));
    }
    if per_class < 2 || repeats == 0 {
        return Err(GraphError::Invalid(
            "need at least two graphs per class and one repeat".into(),
        ));
    }
    let pools: Vec<Vec<&GraphSnapshot>> = classes
        .iter()
        .map(|&c| snaps.iter().filter(|s| s.label == c).collect())
        .collect();
    let mut intra = Vec::with_capacity(repeats);
    let mut inter = Vec::with_capacity(repeats);
    for rep in 0..repeats {
        let mut rng = SplitMix64::derive(seed, rep as u64);
        let drawn: Vec<Vec<&GraphSnapshot>> = pools
            .iter()
            .map(|p| (0..per_class).map(|_| p[rng.below(p.len())]).collect())
            .collect();
        let (mut sa, mut se, mut n) = (0.0, 0.0, 0.0);
        for c in 0..2 {
            for (i, g) in drawn[c].iter().enumerate() {
                let same: f64 = drawn[c]
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, h)| frobenius(&g.weights, &h.weights))
                    .sum::<f64>()
                    / (per_class - 1) as f64;
                let other: f64 = drawn[1 - c]
                    .iter()
                    .map(|h| frobenius(&g.weights, &h.weights))
                    .sum::<f64>()
                    / per_class as f64;
                sa += same;
                se += other;
                n += 1.0;
            }
        }
        intra.push(sa / n);
        inter.push(se / n);
    }
    Ok(DistanceReport {
        intra: MeanStd::of(&intra).expect("non-empty"),
        inter: MeanStd::of(&inter).expect("non-empty"),
        repeats,
        per_class,
    })
}

fn node_names(m: usize, names: Option<&[String]>) -> Result<Vec<String>, GraphError> {
    match names {
        Some(n) if n.len() != m => Err(GraphError::Invalid(format!("{} names for {m} nodes", n.len()))),
        Some(n) => Ok(n.to_vec()),
        None => Ok((0..m).map(|u| u.to_string()).collect()),
    }
}

fn side(len: usize) -> Result<usize, GraphError> {
    let m = (len as f64).sqrt().round() as usize;
    if m * m != len {
        return Err(GraphError::Invalid(format!("matrix of length {len} is not square")));
    }
    Ok(m)
}

fn write(path: &Path, text: &str) -> Result<(), GraphError> {
    fs::write(path, text).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Graphviz digraph; edge labels are weights and pen widths scale with them.
pub fn to_dot(matrix: &[f64], names: Option<&[String]>) -> Result<String, GraphError> {
    let m = side(matrix.len())?;
    let names = node_names(m, names)?;
    let wmax = matrix.iter().copied().fold(0.0, f64::max);
    let mut out = String::from("digraph sensors {\n");
    for (u, n) in names.iter().enumerate() {
        let _ = writeln!(out, "  n{u} [label={n:?}];");
    }
    for u in 0..m {
        for v in 0..m {
            let w = matrix[u * m + v];
            if u == v || w == 0.0 {
                continue;
            }
            let pen = 0.5 + 4.5 * w / wmax;
            let _ = writeln!(out, "  n{u} -> n{v} [label=\"{w:.4}\", penwidth={pen:.3}];");
        }
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn export_dot(matrix: &[f64], names: Option<&[String]>, path: &Path) -> Result<(), GraphError> {
    write(path, &to_dot(matrix, names)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonEdge {
    pub src: usize,
    pub dst: usize,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<JsonEdge>,
}

impl JsonGraph {
    pub fn from_matrix(matrix: &[f64], names: Option<&[String]>) -> Result<Self, GraphError> {
        let m = side(matrix.len())?;
        let nodes = node_names(m, names)?;
        let edges = (0..m * m)
            .filter(|&i| i / m != i % m && matrix[i] != 0.0)
            .map(|i| JsonEdge {
                src: i / m,
                dst: i % m,
                w: matrix[i],
            })
            .collect();
        Ok(Self { nodes, edges })
    }

    pub fn to_matrix(&self) -> Result<Vec<f64>, GraphError> {
        let m = self.nodes.len();
        let mut out = vec![0.0; m * m];
        for e in &self.edges {
            if e.src >= m || e.dst >= m {
                return Err(GraphError::Invalid(format!(
                    "edge {} -> {} outside {m} nodes",
                    e.src, e.dst
                )));
            }
            out[e.src * m + e.dst] = e.w;
        }
        Ok(out)
    }
}

pub fn export_json(matrix: &[f64], names: Option<&[String]>, path: &Path) -> Result<(), GraphError> {
    let g = JsonGraph::from_matrix(matrix, names)?;
    let text = serde_json::to_string_pretty(&g).map_err(|e| GraphError::Invalid(e.to_string()))?;
    write(path, &text)
}

pub fn read_json(path: &Path) -> Result<JsonGraph, GraphError> {
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| GraphError::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}
