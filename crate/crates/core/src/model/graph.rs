//! Per-sample bookkeeping: timestamps, active sensors, message lists and
//! pruning. Everything here is plain data; the differentiable part lives in
//! the forward pass.

use serde::{Deserialize, Serialize};

use crate::data::SampleRecord;

/// Edge weights `e_uv` (row-major `M × M`) and the surviving-edge mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphState {
    pub n_sensors: usize,
    pub weights: Vec<f64>,
    pub keep: Vec<bool>,
}

impl GraphState {
    /// Fully connected, `e = 1` off the diagonal.
    pub fn full(m: usize) -> Self {
        let keep: Vec<bool> = (0..m * m).map(|i| i / m != i % m).collect();
        let weights = keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
        Self {
            n_sensors: m,
            weights,
            keep,
        }
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[u * self.n_sensors + v]
    }

    /// Off-diagonal edges still present.
    pub fn n_kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Number of edges pruned from `remaining` with percentage `k`.
pub fn prune_count(percent: f64, remaining: usize) -> usize {
    (percent / 100.0 * remaining as f64 + 1e-9).floor() as usize
}

/// Mask the lowest-weighted surviving edges. Ties go to the lexicographically
/// smaller `(u, v)` first. Returns the new mask.
pub fn prune_bottom(weights: &[f64], keep: &[bool], percent: f64) -> Vec<bool> {
    let mut alive: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    let n = prune_count(percent, alive.len());
    alive.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));
    let mut out = keep.to_vec();
    for &i in &alive[..n] {
        out[i] = false;
    }
    out
}

/// One observed reading, by sensor and distinct-time index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obs {
    pub sensor: usize,
    pub time: usize,
    pub value: f64,
}

/// Timestamps and activity pattern of one sample.
#[derive(Debug, Clone)]
pub struct SampleIndex {
    pub times: Vec<f64>,
    pub obs: Vec<Obs>,
    /// `active[k * M + u]`
    pub active: Vec<bool>,
    pub n_sensors: usize,
}

impl SampleIndex {
    pub fn new(s: &SampleRecord, m: usize) -> Self {
        let times = s.distinct_times();
        let mut active = vec![false; times.len() * m];
        let mut obs = Vec::with_capacity(s.events.len());
        let mut k = 0;
        for e in &s.events {
            while times[k] != e.time {
                k += 1;
            }
            active[k * m + e.sensor] = true;
            obs.push(Obs {
                sensor: e.sensor,
                time: k,
                value: e.value,
            });
        }
        Self {
            times,
            obs,
            active,
            n_sensors: m,
        }
    }

    /// Messages from every reading to each inactive receiver over a kept edge.
    pub fn messages(&self, keep: &[bool]) -> Messages {
        let m = self.n_sensors;
        let mut out = Messages::default();
        let mut group_of = vec![usize::MAX; self.times.len() * m];
        for (e, o) in self.obs.iter().enumerate() {
            for v in 0..m {
                let pair = o.sensor * m + v;
                if v == o.sensor || self.active[o.time * m + v] || !keep[pair] {
                    continue;
                }
                let slot = o.time * m + v;
                if group_of[slot] == usize::MAX {
                    group_of[slot] = out.group_time.len();
                    out.group_time.push(o.time);
                    out.group_recv.push(v);
                    out.group_size.push(0);
                }
                let g = group_of[slot];
                out.group_size[g] += 1;
                out.src.push(e);
                out.recv.push(v);
                out.pair.push(pair);
                out.group.push(g);
            }
        }
        out
    }
}

/// Flat message list for one layer, grouped by `(time, receiver)`.
#[derive(Debug, Clone, Default)]
pub struct Messages {
    /// Index of the sending reading.
    pub src: Vec<usize>,
    pub recv: Vec<usize>,
    /// `u * M + v`
    pub pair: Vec<usize>,
    pub group: Vec<usize>,
    pub group_time: Vec<usize>,
    pub group_recv: Vec<usize>,
    pub group_size: Vec<usize>,
}

impl Messages {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn n_groups(&self) -> usize {
        self.group_time.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::*;

    #[test]
    fn full_graph_has_zero_diagonal() {
        let g = GraphState::full(3);
        assert_eq!(g.weights, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(g.n_kept(), 6);
    }

    #[test]
    fn prune_half_of_twelve() {
        let g = GraphState::full(4);
        let keep = prune_bottom(&g.weights, &g.keep, 50.0);
        assert_eq!(keep.iter().filter(|&&k| k).count(), 6);
        // all ties → lowest (u, v) go first: (0,1), (0,2), (0,3), (1,0), (1,2), (1,3)
        for i in [1, 2, 3, 4, 6, 7] {
            assert!(!keep[i]);
        }
    }

    #[test]
    fn prune_removes_lowest() {
        let w = vec![0.0, 0.9, 0.1, 0.5, 0.0, 0.2, 0.3, 0.8, 0.0];
        let g = GraphState::full(3);
        let keep = prune_bottom(&w, &g.keep, 50.0);
        assert_eq!(keep, vec![false, true, false, true, false, false, false, true, false]);
    }

    #[test]
    fn messages_skip_active_and_self() {
        let s = sample("a", 0, vec![ev(0, 1.0, 0.5), ev(1, 1.0, 0.2), ev(2, 2.0, 1.0)]);
        let idx = SampleIndex::new(&s, 3);
        let msg = idx.messages(&GraphState::full(3).keep);
        // t=1: 0→2, 1→2 (same group); t=2: 2→0, 2→1
        assert_eq!(msg.len(), 4);
        assert_eq!(msg.n_groups(), 3);
        assert_eq!(msg.group_size, vec![2, 1, 1]);
        assert_eq!(msg.recv, vec![2, 2, 0, 1]);
    }
}
