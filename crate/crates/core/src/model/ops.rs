//! Single-reading versions of the model's building blocks on plain slices.
//! The batched forward pass computes the same quantities on a tape.

use super::{ModelError, ModelParams};
use crate::tensor::sigmoid;

fn row(p: &ModelParams, idx: usize, r: usize) -> &[f64] {
    p.tensors[idx].row(r)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `h = σ(x R_u)`; with mask concatenation the presence bit adds `R_mask,u`.
pub fn embed_observation(p: &ModelParams, u: usize, x: f64) -> Vec<f64> {
    let l = p.layout();
    let r = row(p, l.r, u);
    match l.r_mask {
        Some(rm) => r.iter().zip(row(p, rm, u)).map(|(a, b)| sigmoid(x * a + b)).collect(),
        None => r.iter().map(|a| sigmoid(x * a)).collect(),
    }
}

/// `α = σ(h D [r_v ‖ p_t]ᵀ)` with ablated blocks dropped; 1 when inter-sensor
/// attention is disabled.
pub fn intersensor_alpha(p: &ModelParams, h: &[f64], v: usize, p_t: &[f64]) -> f64 {
    let c = &p.config;
    if c.ablations.disable_intersensor_alpha {
        return 1.0;
    }
    let l = p.layout();
    let d = &p.tensors[l.d];
    let mut logit = 0.0;
    for (i, &hi) in h.iter().enumerate() {
        let drow = d.row(i);
        if !c.ablations.disable_receiver_r {
            logit += hi * dot(&drow[..c.d_r], row(p, l.recv, v));
        }
        if !c.ablations.disable_time_encoding {
            logit += hi * dot(&drow[c.d_r..], p_t);
        }
    }
    sigmoid(logit)
}

/// Pre-activation contribution of one message: `(h_u · w_u) α e_uv w_v`.
pub fn message(p: &ModelParams, h_u: &[f64], u: usize, v: usize, alpha: f64, e: f64) -> Vec<f64> {
    let l = p.layout();
    let s = dot(h_u, row(p, l.w_src, u)) * alpha * e;
    row(p, l.w_dst, v).iter().map(|w| s * w).collect()
}

/// `h_v = σ((h_u · w_u) α e_uv w_v)` for a single message.
pub fn propagate(p: &ModelParams, h_u: &[f64], u: usize, v: usize, alpha: f64, e: f64) -> Vec<f64> {
    message(p, h_u, u, v, alpha, e).into_iter().map(sigmoid).collect()
}

/// `e_prev` times the mean of the α sent along the edge; unchanged without
/// traffic.
pub fn update_edge(e_prev: f64, alphas: &[f64]) -> f64 {
    if alphas.is_empty() {
        e_prev
    } else {
        e_prev * alphas.iter().sum::<f64>() / alphas.len() as f64
    }
}

/// Temporal attention over `rows` (each `[h ‖ p_t]`, in time order).
/// Returns `(z, β)`; an empty sequence gives a zero `z` and empty `β`.
pub fn embed_sensor(p: &ModelParams, rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let c = &p.config;
    let dz = c.d_z();
    let t = rows.len();
    if t == 0 {
        return Ok((vec![0.0; dz], vec![]));
    }
    if t > c.t_max {
        return Err(ModelError::Config(format!("{t} embeddings exceed T_max = {}", c.t_max)));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != dz) {
        return Err(ModelError::Config(format!("row width {} != {dz}", r.len())));
    }
    let l = p.layout();
    let proj = |m: usize, x: &[f64]| -> Vec<f64> {
        let w = &p.tensors[m];
        let cols = w.shape()[1];
        (0..cols).map(|j| (0..dz).map(|i| x[i] * w.get2(i, j)).sum()).collect()
    };
    let beta = if c.ablations.disable_temporal_attention {
        vec![1.0 / t as f64; t]
    } else {
        let q: Vec<Vec<f64>> = rows.iter().map(|r| proj(l.w_q, r)).collect();
        let k: Vec<Vec<f64>> = rows.iter().map(|r| proj(l.w_k, r)).collect();
        let s = p.tensors[l.s].data();
        let scale = 1.0 / (c.d_k as f64).sqrt();
        let a: Vec<f64> = (0..t)
            .map(|i| (0..t).map(|j| dot(&q[i], &k[j]) * scale * s[j]).sum())
            .collect();
        let mx = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|x| (x - mx).exp()).collect();
        let sum: f64 = e.iter().sum();
        e.into_iter().map(|x| x / sum).collect()
    };
    let mut z = vec![0.0; dz];
    for (r, b) in rows.iter().zip(&beta) {
        for (zj, v) in z.iter_mut().zip(proj(l.w, r)) {
            *zj += b * v;
        }
    }
    Ok((z, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn params() -> ModelParams {
        ModelParams::init(&ModelConfig::new(4, 2, 6, 0), 5).unwrap()
    }

    #[test]
    fn zero_value_embeds_to_half() {
        assert!(embed_observation(&params(), 2, 0.0).iter().all(|&h| h == 0.5));
    }

    #[test]
    fn sensors_embed_differently() {
        let p = params();
        assert_ne!(embed_observation(&p, 0, 1.3), embed_observation(&p, 1, 1.3));
    }

    #[test]
    fn zero_embedding_gives_half_alpha() {
        let p = params();
        assert_eq!(intersensor_alpha(&p, &[0.0; 4], 1, &[0.3; 16]), 0.5);
    }

    #[test]
    fn zero_edge_propagates_half() {
        let p = params();
        assert!(propagate(&p, &[0.4; 4], 0, 1, 0.7, 0.0).iter().all(|&h| h == 0.5));
    }

    #[test]
    fn alpha_and_edge_enter_as_a_product() {
        let p = params();
        let h = [0.2, 0.9, 0.4, 0.6];
        let a = propagate(&p, &h, 0, 3, 0.3, 0.8);
        let b = propagate(&p, &h, 0, 3, 0.6, 0.4);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn edge_update_examples() {
        assert!((update_edge(1.0, &[0.2, 0.6]) - 0.4).abs() < 1e-15);
        assert_eq!(update_edge(0.7, &[1.0, 1.0]), 0.7);
        assert_eq!(update_edge(0.7, &[]), 0.7);
    }

    #[test]
    fn single_row_attends_fully() {
        let p = params();
        let row: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let (z, beta) = embed_sensor(&p, std::slice::from_ref(&row)).unwrap();
        assert_eq!(beta, vec![1.0]);
        let w = &p.tensors[p.layout().w];
        for (j, zj) in z.iter().enumerate() {
            let want: f64 = (0..20).map(|i| row[i] * w.get2(i, j)).sum();
            assert!((zj - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_split_attention() {
        let p = params();
        let row = vec![0.3; 20];
        let (_, beta) = embed_sensor(&p, &[row.clone(), row]).unwrap();
        assert_eq!(beta, vec![0.5, 0.5]);
    }

    #[test]
    fn too_many_rows_rejected() {
        let p = params();
        assert!(embed_sensor(&p, &vec![vec![0.0; 20]; 7]).is_err());
    }
}
