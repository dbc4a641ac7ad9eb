//! The differentiable forward pass.
//!
//! Per layer, every reading `h` of an active sensor `u` at time `t` sends a
//! message to each sensor `v` that is inactive at `t` over a surviving edge:
//!
//! ```text
//! α   = σ(h D [r_v ‖ p_t]ᵀ)
//! h_v = σ(Σ_u (h w_u) α e_uv · w_v)
//! ```
//!
//! When several senders reach the same `(t, v)`, their `α` are renormalized
//! by a softmax over the group; a lone sender keeps its raw `α`. After each
//! layer `e_uv` is multiplied by the mean raw `α` along that edge (edges
//! without traffic keep their weight) and, after layer 1, the bottom
//! `K%` of surviving edges are pruned. Later layers re-embed each reading
//! through a per-sensor square map before passing messages again.
//!
//! The last layer's direct and propagated embeddings of each sensor, each
//! joined with its time encoding, go through temporal attention; sensor
//! embeddings are read out and classified.

use super::graph::{prune_bottom, GraphState, Messages, SampleIndex};
use super::{encode_time, Bound, ModelConfig, ModelError, ModelParams, Readout};
use crate::data::SampleRecord;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    /// Record α, edge weights and β for inspection.
    pub trace: bool,
    /// Give samples without readings all-zero sensor embeddings instead of
    /// failing (evaluation under sensor deletion).
    pub allow_empty: bool,
}

/// Values observed during one sample's forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// Raw inter-sensor attention per layer.
    pub alpha_raw: Vec<Vec<f64>>,
    /// Attention after group renormalization, per layer.
    pub alpha_used: Vec<Vec<f64>>,
    /// Graph before layer 1 and after each layer (post-pruning).
    pub graphs: Vec<GraphState>,
    /// Edges masked by pruning, per layer.
    pub pruned: Vec<usize>,
    /// Temporal attention per sensor; `None` for sensors without embeddings.
    pub betas: Vec<Option<Vec<f64>>>,
    /// Time indices of each sensor's embeddings, in order.
    pub sensor_times: Vec<Vec<usize>>,
    /// Time encodings of the sample's distinct timestamps.
    pub time_codes: Vec<Vec<f64>>,
    pub times: Vec<f64>,
}

/// Output of [`embed_sample`].
#[derive(Debug, Clone)]
pub struct SampleEmbedding {
    /// `[z ‖ a]` as a `1 × (readout + d_a)` row.
    pub features: Var,
    /// Final edge weights as a length-`M²` vector (pruned entries 0).
    pub edges: Var,
    pub trace: Option<Trace>,
}

fn time_table(idx: &SampleIndex, cfg: &ModelConfig) -> Result<Vec<Vec<f64>>, ModelError> {
    idx.times
        .iter()
        .map(|&t| {
            if cfg.ablations.disable_time_encoding {
                Ok(vec![0.0; cfg.d_t])
            } else {
                encode_time(t, cfg.d_t)
            }
        })
        .collect()
}

fn rows_const(tape: &mut Tape, table: &[Vec<f64>], which: impl Iterator<Item = usize>, width: usize) -> Var {
    let data: Vec<f64> = which.flat_map(|k| table[k].iter().copied()).collect();
    let n = data.len() / width.max(1);
    tape.constant(Tensor::new(vec![n, width], data).expect("rows of equal width"))
}

/// `h' = σ(h · R'_u)` for every reading, with `R'_u` stored flat `[d_h²]`.
fn reembed(tape: &mut Tape, h: Var, r_layer: Var, sensors: &[usize], d_h: usize) -> Result<Var, ModelError> {
    let n = sensors.len();
    let mut rep = Vec::with_capacity(n * d_h * d_h);
    for e in 0..n {
        for i in 0..d_h {
            for _ in 0..d_h {
                rep.push(e * d_h + i);
            }
        }
    }
    let h_rep = tape.gather(h, &rep)?;
    let h_rep = tape.reshape(h_rep, &[n, d_h * d_h])?;
    let rg = tape.gather_rows(r_layer, sensors)?;
    let prod = tape.mul(h_rep, rg)?;
    let mut sel = vec![0.0; d_h * d_h * d_h];
    for i in 0..d_h {
        for j in 0..d_h {
            sel[(i * d_h + j) * d_h + j] = 1.0;
        }
    }
    let sel = tape.constant(Tensor::new(vec![d_h * d_h, d_h], sel)?);
    let pre = tape.matmul(prod, sel)?;
    Ok(tape.sigmoid(pre)?)
}

struct LayerOut {
    h_prop: Option<Var>,
    msgs: Messages,
    edges: Var,
    keep: Vec<bool>,
}

#[allow(clippy::too_many_arguments)]
fn message_layer(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    idx: &SampleIndex,
    h: Var,
    codes: &[Vec<f64>],
    edges: Var,
    keep: &[bool],
    first: bool,
    trace: Option<&mut Trace>,
) -> Result<LayerOut, ModelError> {
    let m = cfg.n_sensors;
    let ab = cfg.ablations;
    let msgs = idx.messages(keep);
    let mut keep = keep.to_vec();
    if msgs.is_empty() {
        if let Some(tr) = trace {
            tr.alpha_raw.push(vec![]);
            tr.alpha_used.push(vec![]);
        }
        let mut edges = edges;
        if first && !ab.disable_edge_weights {
            let w = tape.value(edges).data().to_vec();
            keep = prune_bottom(&w, &keep, cfg.prune_percent);
            let mask = tape.constant(Tensor::vector(keep.iter().map(|&k| f64::from(u8::from(k))).collect()));
            edges = tape.mul(edges, mask)?;
        }
        return Ok(LayerOut {
            h_prop: None,
            msgs,
            edges,
            keep,
        });
    }
    let l = &p.layout;
    let n_msg = msgs.len();
    let sensors: Vec<usize> = idx.obs.iter().map(|o| o.sensor).collect();

    // α
    let (alpha_raw, alpha_used) = if ab.disable_intersensor_alpha {
        let ones = tape.constant(Tensor::filled(&[n_msg], 1.0));
        (ones, ones)
    } else {
        let hd = tape.matmul(h, p.var(l.d))?;
        let mut logit: Option<Var> = None;
        if !ab.disable_receiver_r {
            let hdr = tape.slice_cols(hd, 0, cfg.d_r)?;
            let sr = tape.matmul_nt(hdr, p.var(l.recv))?;
            let flat: Vec<usize> = msgs.src.iter().zip(&msgs.recv).map(|(&e, &v)| e * m + v).collect();
            logit = Some(tape.gather(sr, &flat)?);
        }
        if !ab.disable_time_encoding {
            let hdp = tape.slice_cols(hd, cfg.d_r, cfg.d_t)?;
            let pe = rows_const(tape, codes, idx.obs.iter().map(|o| o.time), cfg.d_t);
            let sp = tape.row_dot(hdp, pe)?;
            let sp = tape.gather(sp, &msgs.src)?;
            logit = Some(match logit {
                Some(a) => tape.add(a, sp)?,
                None => sp,
            });
        }
        let logit = match logit {
            Some(v) => v,
            None => tape.constant(Tensor::zeros(&[n_msg])),
        };
        let raw = tape.sigmoid(logit)?;
        let multi: Vec<f64> = msgs
            .group
            .iter()
            .map(|&g| f64::from(u8::from(msgs.group_size[g] > 1)))
            .collect();
        let used = if multi.iter().any(|&x| x > 0.0) {
            let soft = tape.segment_softmax(raw, &msgs.group)?;
            let single: Vec<f64> = multi.iter().map(|x| 1.0 - x).collect();
            let mc = tape.constant(Tensor::vector(multi));
            let sc = tape.constant(Tensor::vector(single));
            let a = tape.mul(soft, mc)?;
            let b = tape.mul(raw, sc)?;
            tape.add(a, b)?
        } else {
            raw
        };
        (raw, used)
    };

    // messages
    let ws = tape.gather_rows(p.var(l.w_src), &sensors)?;
    let hw = tape.row_dot(h, ws)?;
    let hw = tape.gather(hw, &msgs.src)?;
    let e_m = tape.gather(edges, &msgs.pair)?;
    let coef = tape.mul(hw, alpha_used)?;
    let coef = tape.mul(coef, e_m)?;
    let c_g = tape.scatter_add(coef, &msgs.group, msgs.n_groups())?;
    let wd = tape.gather_rows(p.var(l.w_dst), &msgs.group_recv)?;
    let pre = tape.scale_rows(wd, c_g)?;
    let h_prop = tape.sigmoid(pre)?;

    if let Some(tr) = trace {
        tr.alpha_raw.push(tape.value(alpha_raw).data().to_vec());
        tr.alpha_used.push(tape.value(alpha_used).data().to_vec());
    }

    let mut edges = edges;
    if !ab.disable_edge_weights {
        let mut count = vec![0usize; m * m];
        for &q in &msgs.pair {
            count[q] += 1;
        }
        let inv: Vec<f64> = count
            .iter()
            .map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 })
            .collect();
        let idle: Vec<f64> = count.iter().map(|&c| f64::from(u8::from(c == 0))).collect();
        let sums = tape.scatter_add(alpha_raw, &msgs.pair, m * m)?;
        let inv = tape.constant(Tensor::vector(inv));
        let idle = tape.constant(Tensor::vector(idle));
        let mean = tape.mul(sums, inv)?;
        let factor = tape.add(mean, idle)?;
        edges = tape.mul(edges, factor)?;
        if first {
            let w = tape.value(edges).data().to_vec();
            keep = prune_bottom(&w, &keep, cfg.prune_percent);
            let mask = tape.constant(Tensor::vector(keep.iter().map(|&k| f64::from(u8::from(k))).collect()));
            edges = tape.mul(edges, mask)?;
        }
    }
    Ok(LayerOut {
        h_prop: Some(h_prop),
        msgs,
        edges,
        keep,
    })
}

/// Sample embedding `[z ‖ a]` and final edge weights.
pub fn embed_sample(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    sample: &SampleRecord,
    opts: ForwardOptions,
) -> Result<SampleEmbedding, ModelError> {
    let m = cfg.n_sensors;
    let l = &p.layout;
    if sample.static_attrs.len() != cfg.attr_dim {
        return Err(ModelError::Sample {
            id: sample.id.clone(),
            msg: format!(
                "{} static attributes, model expects {}",
                sample.static_attrs.len(),
                cfg.attr_dim
            ),
        });
    }
    if let Some(e) = sample.events.iter().find(|e| e.sensor >= m) {
        return Err(ModelError::Sample {
            id: sample.id.clone(),
            msg: format!("sensor {} >= M = {m}", e.sensor),
        });
    }
    let mut trace = opts.trace.then(Trace::default);
    let full = GraphState::full(m);

    let z_parts: Vec<Var>;
    let edges: Var;
    if sample.events.is_empty() {
        if !opts.allow_empty {
            return Err(ModelError::Sample {
                id: sample.id.clone(),
                msg: "sample has no observations".into(),
            });
        }
        z_parts = (0..m).map(|_| tape.constant(Tensor::zeros(&[1, cfg.d_z()]))).collect();
        edges = tape.constant(Tensor::vector(full.weights.clone()));
        if let Some(tr) = trace.as_mut() {
            tr.graphs.push(full.clone());
            tr.betas = vec![None; m];
            tr.sensor_times = vec![vec![]; m];
        }
    } else {
        let idx = SampleIndex::new(sample, m);
        let codes = time_table(&idx, cfg)?;
        let sensors: Vec<usize> = idx.obs.iter().map(|o| o.sensor).collect();
        let values: Vec<f64> = idx.obs.iter().map(|o| o.value).collect();

        // layer-1 observation embedding
        let rg = tape.gather_rows(p.var(l.r), &sensors)?;
        let xs = tape.constant(Tensor::vector(values));
        let mut pre = tape.scale_rows(rg, xs)?;
        if let Some(rm) = l.r_mask {
            let mg = tape.gather_rows(p.var(rm), &sensors)?;
            pre = tape.add(pre, mg)?;
        }
        let mut h = tape.sigmoid(pre)?;

        let mut e = tape.constant(Tensor::vector(full.weights.clone()));
        let mut keep = full.keep.clone();
        if let Some(tr) = trace.as_mut() {
            tr.graphs.push(full.clone());
        }
        let mut last: Option<LayerOut> = None;
        for layer in 1..=cfg.layers {
            if layer > 1 {
                h = reembed(tape, h, p.var(l.r_layer[layer - 2]), &sensors, cfg.d_h)?;
            }
            let before = keep.iter().filter(|&&k| k).count();
            let out = message_layer(tape, p, cfg, &idx, h, &codes, e, &keep, layer == 1, trace.as_mut())?;
            e = out.edges;
            keep = out.keep.clone();
            if let Some(tr) = trace.as_mut() {
                tr.pruned.push(before - keep.iter().filter(|&&k| k).count());
                tr.graphs.push(GraphState {
                    n_sensors: m,
                    weights: tape.value(e).data().to_vec(),
                    keep: keep.clone(),
                });
            }
            last = Some(out);
        }
        let last = last.expect("at least one layer");
        edges = e;

        // rows: direct readings, then propagated embeddings
        let mut row_sensor = sensors.clone();
        let mut row_time: Vec<usize> = idx.obs.iter().map(|o| o.time).collect();
        let xh = match last.h_prop {
            Some(hp) => {
                row_sensor.extend_from_slice(&last.msgs.group_recv);
                row_time.extend_from_slice(&last.msgs.group_time);
                tape.concat(&[h, hp], 0)?
            }
            None => h,
        };
        let pr = rows_const(tape, &codes, row_time.iter().copied(), cfg.d_t);
        let x = tape.concat(&[xh, pr], 1)?;
        let xw = tape.matmul(x, p.var(l.w))?;
        let qk = if cfg.ablations.disable_temporal_attention {
            None
        } else {
            Some((tape.matmul(x, p.var(l.w_q))?, tape.matmul(x, p.var(l.w_k))?))
        };
        let mut per_sensor: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (r, &v) in row_sensor.iter().enumerate() {
            per_sensor[v].push(r);
        }
        let mut parts = Vec::with_capacity(m);
        for (v, rows) in per_sensor.iter_mut().enumerate() {
            rows.sort_by_key(|&r| row_time[r]);
            let t = rows.len();
            if t == 0 {
                parts.push(tape.constant(Tensor::zeros(&[1, cfg.d_z()])));
                if let Some(tr) = trace.as_mut() {
                    tr.betas.push(None);
                    tr.sensor_times.push(vec![]);
                }
                continue;
            }
            if t > cfg.t_max {
                return Err(ModelError::Sample {
                    id: sample.id.clone(),
                    msg: format!("sensor {v} has {t} embeddings, T_max = {}", cfg.t_max),
                });
            }
            let xw_v = tape.gather_rows(xw, rows)?;
            let beta = match qk {
                None => tape.constant(Tensor::filled(&[t], 1.0 / t as f64)),
                Some((q, k)) => {
                    let qv = tape.gather_rows(q, rows)?;
                    let kv = tape.gather_rows(k, rows)?;
                    let att = tape.matmul_nt(qv, kv)?;
                    let att = tape.scale(att, 1.0 / (cfg.d_k as f64).sqrt())?;
                    let first_t: Vec<usize> = (0..t).collect();
                    let s = tape.gather_rows(p.var(l.s), &first_t)?;
                    let a = tape.matmul(att, s)?;
                    let a = tape.reshape(a, &[t])?;
                    tape.masked_softmax(a, &vec![true; t])?
                }
            };
            if let Some(tr) = trace.as_mut() {
                tr.betas.push(Some(tape.value(beta).data().to_vec()));
                tr.sensor_times.push(rows.iter().map(|&r| row_time[r]).collect());
            }
            let beta = tape.reshape(beta, &[1, t])?;
            parts.push(tape.matmul(beta, xw_v)?);
        }
        z_parts = parts;
        if let Some(tr) = trace.as_mut() {
            tr.time_codes = codes;
            tr.times = idx.times.clone();
        }
    }

    let z = match cfg.readout {
        Readout::Concat => tape.concat(&z_parts, 1)?,
        Readout::Mean => {
            let stacked = tape.concat(&z_parts, 0)?;
            let avg = tape.constant(Tensor::filled(&[1, m], 1.0 / m as f64));
            tape.matmul(avg, stacked)?
        }
    };
    let a = match l.a_proj {
        Some(ap) => {
            let attrs = tape.constant(Tensor::new(vec![1, cfg.attr_dim], sample.static_attrs.clone())?);
            tape.matmul(attrs, p.var(ap))?
        }
        None => tape.constant(Tensor::zeros(&[1, cfg.d_a])),
    };
    let features = tape.concat(&[z, a], 1)?;
    Ok(SampleEmbedding { features, edges, trace })
}

/// Two-layer classifier over stacked sample features `[B × in]`.
pub fn classify(tape: &mut Tape, p: &Bound, features: Var) -> Result<Var, ModelError> {
    let l = &p.layout;
    let h = tape.matmul(features, p.var(l.fc1_w))?;
    let h = tape.add_row(h, p.var(l.fc1_b))?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, p.var(l.fc2_w))?;
    Ok(tape.add_row(o, p.var(l.fc2_b))?)
}

/// `L_r` over the batch's final edge weights (pruned entries 0): mean absolute
/// difference over ordered sample pairs, scaled by `1 / (M² (B − 1)²)`.
pub fn graph_regularizer(tape: &mut Tape, edges: &[Var], m: usize) -> Result<Option<Var>, ModelError> {
    let b = edges.len();
    if b < 2 {
        return Ok(None);
    }
    let rows: Vec<Var> = edges
        .iter()
        .map(|&e| tape.reshape(e, &[1, m * m]))
        .collect::<Result<_, _>>()?;
    let stacked = tape.concat(&rows, 0)?;
    let l1 = tape.pairwise_l1(stacked)?;
    let scale = 1.0 / ((m * m) as f64 * ((b - 1) * (b - 1)) as f64);
    Ok(Some(tape.scale(l1, scale)?))
}

/// Forward a batch on `tape`; returns `(loss, logits [B × C], traces)`.
pub fn batch_loss(
    tape: &mut Tape,
    p: &Bound,
    cfg: &ModelConfig,
    samples: &[&SampleRecord],
    opts: ForwardOptions,
) -> Result<(Var, Var, Vec<Option<Trace>>), ModelError> {
    if samples.is_empty() {
        return Err(ModelError::Config("empty batch".into()));
    }
    let mut feats = Vec::with_capacity(samples.len());
    let mut edges = Vec::with_capacity(samples.len());
    let mut traces = Vec::with_capacity(samples.len());
    for s in samples {
        let emb = embed_sample(tape, p, cfg, s, opts)?;
        feats.push(emb.features);
        edges.push(emb.edges);
        traces.push(emb.trace);
    }
    let x = tape.concat(&feats, 0)?;
    let logits = classify(tape, p, x)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let ce = tape.cross_entropy(logits, &labels)?;
    let lambda = cfg.effective_lambda();
    let loss = match (lambda > 0.0).then(|| graph_regularizer(tape, &edges, cfg.n_sensors)) {
        Some(r) => match r? {
            Some(lr) => {
                let lr = tape.scale(lr, lambda)?;
                tape.add(ce, lr)?
            }
            None => ce,
        },
        None => ce,
    };
    Ok((loss, logits, traces))
}

/// Softmax class probabilities for one sample under frozen parameters.
pub fn predict_proba(params: &ModelParams, sample: &SampleRecord) -> Result<Vec<f64>, ModelError> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let opts = ForwardOptions {
        trace: false,
        allow_empty: true,
    };
    let emb = embed_sample(&mut tape, &p, &params.config, sample, opts)?;
    let logits = classify(&mut tape, &p, emb.features)?;
    Ok(softmax(tape.value(logits).data()))
}

/// Final graph and trace for one sample under frozen parameters.
pub fn inspect(params: &ModelParams, sample: &SampleRecord) -> Result<(Vec<f64>, Trace), ModelError> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let opts = ForwardOptions {
        trace: true,
        allow_empty: true,
    };
    let emb = embed_sample(&mut tape, &p, &params.config, sample, opts)?;
    let logits = classify(&mut tape, &p, emb.features)?;
    Ok((tape.value(logits).data().to_vec(), emb.trace.expect("trace requested")))
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
