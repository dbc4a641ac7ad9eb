//! Synthetic corpus with class-dependent sensor coupling.
//!
//! Every sample shares one irregular time grid across its sensors. Each
//! sensor follows a stationary AR(1) process around its own baseline
//! (alternating `+baseline`, `-baseline`). A fraction of all events is
//! dropped uniformly at random. In class-1 samples the sensors of each
//! coupled pair `(a, b)` are then linked: every remaining reading of `b`
//! copies the latest strictly earlier remaining reading of `a`, plus noise.
//!
//! The oracle fits a logistic model on lagged-correlation features: for each
//! ordered pair `(a, b)`, the Pearson correlation between `b`'s readings and
//! `a`'s most recent strictly earlier reading.

use serde::{Deserialize, Serialize};

use super::{split, DataError, Dataset, DatasetHeader, ObservationEvent, SampleRecord, SplitSpec};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sensors: usize,
    pub n_samples: usize,
    pub obs_per_sample: usize,
    pub drop_ratio: f64,
    pub seed: u64,
    /// AR(1) coefficient per grid step.
    pub phi: f64,
    /// Absolute baseline level of each sensor.
    pub baseline: f64,
    /// Noise std of a coupled reading around its source.
    pub coupling_noise: f64,
    /// Adds a label-independent `age` attribute drawn from U(20, 90).
    pub with_age: bool,
}

impl SynthConfig {
    pub fn new(n_sensors: usize, n_samples: usize, obs_per_sample: usize, drop_ratio: f64, seed: u64) -> Self {
        Self {
            n_sensors,
            n_samples,
            obs_per_sample,
            drop_ratio,
            seed,
            phi: 0.5,
            baseline: 1.0,
            coupling_noise: 0.2,
            with_age: false,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_sensors < 4 {
            return Err(DataError::invalid(format!(
                "synthetic data needs M >= 4, got {}",
                self.n_sensors
            )));
        }
        if self.n_samples < 6 {
            return Err(DataError::invalid(format!(
                "synthetic data needs N >= 6, got {}",
                self.n_samples
            )));
        }
        if self.obs_per_sample == 0 {
            return Err(DataError::invalid("obs_per_sample must be positive"));
        }
        if !(0.0..1.0).contains(&self.drop_ratio) {
            return Err(DataError::invalid(format!(
                "drop ratio {} must be in [0, 1); larger values empty the samples",
                self.drop_ratio
            )));
        }
        if !(0.0..1.0).contains(&self.phi.abs()) || self.coupling_noise < 0.0 {
            return Err(DataError::invalid(
                "phi must lie in (-1, 1) and coupling noise be non-negative",
            ));
        }
        Ok(())
    }
}

/// Coupled `(source, target)` sensor pairs.
pub fn coupled_pairs() -> [(usize, usize); 2] {
    [(0, 1), (2, 3)]
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let m = cfg.n_sensors;
    let obs = cfg.obs_per_sample;
    let innov = (1.0 - cfg.phi * cfg.phi).sqrt();
    let mu: Vec<f64> = (0..m)
        .map(|u| if u % 2 == 0 { cfg.baseline } else { -cfg.baseline })
        .collect();
    let n_drop = (cfg.drop_ratio * (m * obs) as f64 + 1e-9).floor() as usize;

    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let label = i % 2;
        let mut rng = SplitMix64::derive(cfg.seed, i as u64);
        let mut times = Vec::with_capacity(obs);
        let mut t = rng.uniform(0.0, 1.0);
        for _ in 0..obs {
            times.push(t);
            t += rng.uniform(0.5, 1.5);
        }
        // x[u][k]
        let mut x = vec![vec![0.0; obs]; m];
        for k in 0..obs {
            for u in 0..m {
                x[u][k] = if k == 0 {
                    mu[u] + rng.normal()
                } else {
                    mu[u] + cfg.phi * (x[u][k - 1] - mu[u]) + innov * rng.normal()
                };
            }
        }
        let mut slots: Vec<(usize, usize)> = (0..obs).flat_map(|k| (0..m).map(move |u| (k, u))).collect();
        rng.shuffle(&mut slots);
        let mut keep: Vec<(usize, usize)> = slots[n_drop..].to_vec();
        keep.sort_unstable();
        if keep.is_empty() {
            return Err(DataError::invalid("drop ratio leaves an empty sample"));
        }
        if label == 1 {
            // b's reading copies a's latest reading at an earlier step.
            for (a, b) in coupled_pairs() {
                let a_steps: Vec<usize> = keep.iter().filter(|s| s.1 == a).map(|s| s.0).collect();
                for &(k, u) in &keep {
                    if u != b {
                        continue;
                    }
                    let n_before = a_steps.partition_point(|&ka| ka < k);
                    if n_before > 0 {
                        x[b][k] = x[a][a_steps[n_before - 1]] + cfg.coupling_noise * rng.normal();
                    }
                }
            }
        }
        let events = keep
            .into_iter()
            .map(|(k, u)| ObservationEvent {
                sensor: u,
                time: times[k],
                value: x[u][k],
            })
            .collect();
        let static_attrs = if cfg.with_age {
            vec![rng.uniform(20.0, 90.0)]
        } else {
            vec![]
        };
        samples.push(SampleRecord {
            id: format!("synth-{i:05}"),
            events,
            static_attrs,
            label,
        });
    }
    let header = DatasetHeader {
        n_sensors: m,
        n_classes: 2,
        t_max: obs,
        sensor_names: Some((0..m).map(|u| format!("s{u}")).collect()),
        attr_names: cfg.with_age.then(|| vec!["age".to_string()]),
    };
    Dataset::new(header, samples)
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 3 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 1e-12 || syy <= 1e-12 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Lagged correlation for every ordered pair `(a, b)`, `a != b`, row-major.
pub fn lagged_features(s: &SampleRecord, n_sensors: usize) -> Vec<f64> {
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_sensors];
    for e in &s.events {
        series[e.sensor].push((e.time, e.value));
    }
    let mut out = Vec::with_capacity(n_sensors * (n_sensors - 1));
    for a in 0..n_sensors {
        for b in 0..n_sensors {
            if a == b {
                continue;
            }
            let (mut src, mut dst) = (Vec::new(), Vec::new());
            let mut j = 0;
            let mut last: Option<f64> = None;
            for &(tb, vb) in &series[b] {
                while j < series[a].len() && series[a][j].0 < tb {
                    last = Some(series[a][j].1);
                    j += 1;
                }
                if let Some(va) = last {
                    src.push(va);
                    dst.push(vb);
                }
            }
            out.push(pearson(&src, &dst));
        }
    }
    out
}

/// Logistic regression on standardized features by full-batch gradient
/// descent; returns `(weights, bias, means, stds)`.
fn fit_logistic(x: &[Vec<f64>], y: &[usize]) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for row in x {
        for j in 0..d {
            mean[j] += row[j] / n;
        }
    }
    for row in x {
        for j in 0..d {
            std[j] += (row[j] - mean[j]).powi(2) / n;
        }
    }
    for s in &mut std {
        *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
    }
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| (0..d).map(|j| (r[j] - mean[j]) / std[j]).collect())
        .collect();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    let (lr, l2) = (0.5, 1e-3);
    for _ in 0..2000 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (r, &yi) in z.iter().zip(y) {
            let p = crate::tensor::sigmoid(b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>());
            let g = p - yi as f64;
            gb += g / n;
            for j in 0..d {
                gw[j] += g * r[j] / n;
            }
        }
        for j in 0..d {
            w[j] -= lr * (gw[j] + l2 * w[j]);
        }
        b -= lr * gb;
    }
    (w, b, mean, std)
}

/// Held-out (validation + test) accuracy of the lagged-correlation oracle
/// under the default stratified split with `split_seed`.
pub fn oracle_accuracy(ds: &Dataset, split_seed: u64) -> Result<f64, DataError> {
    if ds.n_classes != 2 {
        return Err(DataError::invalid("the oracle needs binary labels"));
    }
    let sp = split(ds, &SplitSpec::new(split_seed))?;
    let feats: Vec<Vec<f64>> = ds.samples.iter().map(|s| lagged_features(s, ds.n_sensors)).collect();
    let xt: Vec<Vec<f64>> = sp.train.iter().map(|&i| feats[i].clone()).collect();
    let yt: Vec<usize> = sp.train.iter().map(|&i| ds.samples[i].label).collect();
    let (w, b, mean, std) = fit_logistic(&xt, &yt);
    let eval = sp.eval_indices();
    let correct = eval
        .iter()
        .filter(|&&i| {
            let score: f64 = b + feats[i]
                .iter()
                .enumerate()
                .map(|(j, v)| w[j] * (v - mean[j]) / std[j])
                .sum::<f64>();
            usize::from(score > 0.0) == ds.samples[i].label
        })
        .count();
    Ok(correct as f64 / eval.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_drop_gives_full_grid() {
        let ds = generate(&SynthConfig::new(5, 10, 7, 0.0, 3)).unwrap();
        for s in &ds.samples {
            assert_eq!(s.events.len(), 35);
            assert_eq!(s.distinct_times().len(), 7);
        }
    }

    #[test]
    fn drop_count_exact() {
        let ds = generate(&SynthConfig::new(6, 10, 30, 0.6, 3)).unwrap();
        for s in &ds.samples {
            assert_eq!(s.events.len(), 180 - 108);
        }
    }

    #[test]
    fn balanced_labels() {
        let ds = generate(&SynthConfig::new(4, 400, 5, 0.0, 1)).unwrap();
        let ones = ds.labels().iter().filter(|&&y| y == 1).count();
        assert_eq!(ones, 200);
    }

    #[test]
    fn deterministic() {
        let c = SynthConfig::new(4, 20, 6, 0.5, 11);
        assert_eq!(generate(&c).unwrap(), generate(&c).unwrap());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(generate(&SynthConfig::new(3, 20, 6, 0.5, 0)).is_err());
        assert!(generate(&SynthConfig::new(4, 20, 6, 1.0, 0)).is_err());
    }

    #[test]
    fn age_attribute() {
        let mut c = SynthConfig::new(4, 20, 6, 0.5, 0);
        c.with_age = true;
        let ds = generate(&c).unwrap();
        assert_eq!(ds.attr_dim(), 1);
        assert!(ds.samples.iter().all(|s| (20.0..90.0).contains(&s.static_attrs[0])));
    }

    #[test]
    fn lagged_feature_detects_copy() {
        use crate::data::test_support::*;
        // sensor 1 at time k+0.5 copies sensor 0 at time k
        let mut events = Vec::new();
        let vals = [0.3, -1.2, 0.8, 2.0, -0.4, 1.1];
        for (k, v) in vals.iter().enumerate() {
            events.push(ev(0, k as f64, *v));
            events.push(ev(1, k as f64 + 0.5, *v));
        }
        let s = sample("x", 0, events);
        let f = lagged_features(&s, 2);
        assert!((f[0] - 1.0).abs() < 1e-12);
    }
}
