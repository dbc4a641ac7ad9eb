//! Sensor importance for the leave-fixed-sensors-out harness.
//!
//! Each sensor is reduced to three per-sample summaries (mean, std, count;
//! zeros when the sensor is silent). One depth-1 stump is fit per summary at
//! its information-gain-maximising threshold; the sensor scores the training
//! AUROC of its highest-gain stump.

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::metrics::auroc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorRanking {
    /// Sensor ids, most informative first.
    pub order: Vec<usize>,
    /// Score per sensor id.
    pub scores: Vec<f64>,
}

fn entropy(pos: f64, n: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    let p = pos / n;
    let h = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    h(p) + h(1.0 - p)
}

struct Stump {
    gain: f64,
    scores: Vec<f64>,
}

/// Best-gain threshold split of `x` against binary `y`.
fn fit_stump(x: &[f64], y: &[bool]) -> Stump {
    let n = x.len() as f64;
    let total_pos = y.iter().filter(|&&b| b).count() as f64;
    let base = entropy(total_pos, n);
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut best: Option<(f64, f64)> = None; // (gain, threshold)
    let mut left_pos = 0.0;
    for k in 0..order.len().saturating_sub(1) {
        if y[order[k]] {
            left_pos += 1.0;
        }
        let (a, b) = (x[order[k]], x[order[k + 1]]);
        if a == b {
            continue;
        }
        let nl = (k + 1) as f64;
        let nr = n - nl;
        let cond = (nl / n) * entropy(left_pos, nl) + (nr / n) * entropy(total_pos - left_pos, nr);
        let gain = base - cond;
        if best.is_none_or(|(g, _)| gain > g + 1e-15) {
            best = Some((gain, 0.5 * (a + b)));
        }
    }
    let Some((gain, thr)) = best else {
        return Stump {
            gain: 0.0,
            scores: vec![total_pos / n.max(1.0); x.len()],
        };
    };
    let frac = |left: bool| {
        let (mut p, mut c) = (0.0, 0.0);
        for (xi, &yi) in x.iter().zip(y) {
            if (*xi <= thr) == left {
                c += 1.0;
                if yi {
                    p += 1.0;
                }
            }
        }
        p / c
    };
    let (pl, pr) = (frac(true), frac(false));
    Stump {
        gain,
        scores: x.iter().map(|&v| if v <= thr { pl } else { pr }).collect(),
    }
}

pub fn rank_sensors(ds: &Dataset, train: &[usize]) -> Result<SensorRanking, DataError> {
    if ds.n_classes != 2 {
        return Err(DataError::invalid("sensor ranking needs binary labels"));
    }
    let y: Vec<bool> = train.iter().map(|&i| ds.samples[i].label == 1).collect();
    let m = ds.n_sensors;
    let mut scores = vec![0.5; m];
    let mut observed = vec![false; m];
    for u in 0..m {
        let mut feats = [Vec::new(), Vec::new(), Vec::new()];
        for &i in train {
            let vals: Vec<f64> = ds.samples[i]
                .events
                .iter()
                .filter(|e| e.sensor == u)
                .map(|e| e.value)
                .collect();
            let n = vals.len() as f64;
            let (mean, std) = if vals.is_empty() {
                (0.0, 0.0)
            } else {
                let mu = vals.iter().sum::<f64>() / n;
                (mu, (vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt())
            };
            observed[u] |= !vals.is_empty();
            feats[0].push(mean);
            feats[1].push(std);
            feats[2].push(n);
        }
        if !observed[u] {
            continue;
        }
        let mut best: Option<Stump> = None;
        for f in &feats {
            let s = fit_stump(f, &y);
            if best.as_ref().is_none_or(|b| s.gain > b.gain + 1e-15) {
                best = Some(s);
            }
        }
        scores[u] = best.and_then(|s| auroc(&s.scores, &y)).unwrap_or(0.5);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        observed[b]
            .cmp(&observed[a])
            .then(scores[b].total_cmp(&scores[a]))
            .then(a.cmp(&b))
    });
    Ok(SensorRanking { order, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_support::*;
    use crate::data::SampleRecord;
    use crate::rng::SplitMix64;

    fn make(n: usize, value: impl Fn(usize, usize, usize) -> Option<f64>, m: usize) -> Dataset {
        let samples: Vec<SampleRecord> = (0..n)
            .map(|i| {
                let y = i % 2;
                let mut events = Vec::new();
                for t in 0..4 {
                    for u in 0..m {
                        if let Some(v) = value(i, y, u) {
                            events.push(ev(u, t as f64, v + 0.01 * t as f64));
                        }
                    }
                }
                if events.is_empty() {
                    events.push(ev(0, 0.0, 0.0));
                }
                sample(&i.to_string(), y, events)
            })
            .collect();
        Dataset::new(header(m, 2, 4), samples).unwrap()
    }

    #[test]
    fn separable_sensor_ranks_first() {
        let ds = make(
            40,
            |i, y, u| Some(if u == 2 { 5.0 * y as f64 } else { (i % 7) as f64 }),
            4,
        );
        let r = rank_sensors(&ds, &(0..40).collect::<Vec<_>>()).unwrap();
        assert_eq!(r.order[0], 2);
        assert_eq!(r.scores[2], 1.0);
    }

    #[test]
    fn identical_sensors_keep_id_order() {
        let ds = make(20, |i, _, _| Some((i % 3) as f64), 5);
        let r = rank_sensors(&ds, &(0..20).collect::<Vec<_>>()).unwrap();
        assert_eq!(r.order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn unobserved_sensor_last_at_half() {
        let ds = make(20, |i, y, u| (u != 1).then_some((i % 5) as f64 + y as f64), 3);
        let r = rank_sensors(&ds, &(0..20).collect::<Vec<_>>()).unwrap();
        assert_eq!(*r.order.last().unwrap(), 1);
        assert_eq!(r.scores[1], 0.5);
    }

    #[test]
    fn label_independent_sensor_near_half() {
        // Monte-Carlo: values drawn independently of labels.
        let mut rng = SplitMix64::new(8);
        let vals: Vec<f64> = (0..2000).map(|_| rng.normal()).collect();
        let ds = make(2000, |i, _, _| Some(vals[i]), 1);
        let r = rank_sensors(&ds, &(0..2000).collect::<Vec<_>>()).unwrap();
        assert!((r.scores[0] - 0.5).abs() <= 0.05, "{}", r.scores[0]);
    }
}
