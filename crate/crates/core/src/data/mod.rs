//! Irregular multivariate time series: records, ingestion, and the harness
//! transforms applied to them (splits, batching, sensor leave-out, ranking).

mod batch;
mod group;
mod io;
mod leaveout;
mod rank;
mod split;
pub mod synth;

pub use batch::balanced_batches;
pub use group::{group_split, GroupRule, GroupSpec};
pub use io::{load_header, load_jsonl, save_jsonl, DatasetHeader};
pub use leaveout::{apply_leaveout, silenced_count, Corruption, LeaveOutMode, LeaveOutSpec};
pub use rank::{rank_sensors, SensorRanking};
pub use split::{split, Split, SplitSpec};
pub use synth::{generate as synth_generate, oracle_accuracy, SynthConfig};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("sample {id}: {msg}")]
    Sample { id: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("i/o error on {path}: {msg}")]
    Io { path: String, msg: String },
}

impl DataError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DataError::Invalid(msg.into())
    }
}

/// One reading `(t, x)` of sensor `sensor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationEvent {
    pub sensor: usize,
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Sorted by `(time, sensor)`, no repeated `(sensor, time)`.
    pub events: Vec<ObservationEvent>,
    pub static_attrs: Vec<f64>,
    pub label: usize,
}

impl SampleRecord {
    /// Distinct timestamps in ascending order.
    pub fn distinct_times(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.events {
            if out.last() != Some(&e.time) {
                out.push(e.time);
            }
        }
        out
    }

    /// Checks ordering, uniqueness and id bounds against `n_sensors`.
    pub fn validate(&self, n_sensors: usize) -> Result<(), String> {
        for (i, e) in self.events.iter().enumerate() {
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(format!("event {i}: time {} must be finite and >= 0", e.time));
            }
            if !e.value.is_finite() {
                return Err(format!("event {i}: value {} is not finite", e.value));
            }
            if e.sensor >= n_sensors {
                return Err(format!("event {i}: sensor {} >= M = {n_sensors}", e.sensor));
            }
            if i > 0 {
                let p = &self.events[i - 1];
                match p.time.total_cmp(&e.time).then(p.sensor.cmp(&e.sensor)) {
                    std::cmp::Ordering::Less => {}
                    std::cmp::Ordering::Equal => {
                        return Err(format!(
                            "event {i}: duplicate observation of sensor {} at time {}",
                            e.sensor, e.time
                        ))
                    }
                    std::cmp::Ordering::Greater => {
                        return Err(format!("event {i}: events not sorted by (time, sensor)"))
                    }
                }
            }
        }
        Ok(())
    }

    /// Sort events into canonical `(time, sensor)` order.
    pub fn sort_events(&mut self) {
        self.events
            .sort_by(|a, b| a.time.total_cmp(&b.time).then(a.sensor.cmp(&b.sensor)));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<SampleRecord>,
    pub n_sensors: usize,
    pub n_classes: usize,
    /// Upper bound on distinct timestamps per sample.
    pub t_max: usize,
    pub sensor_names: Option<Vec<String>>,
    pub attr_names: Option<Vec<String>>,
}

impl Dataset {
    /// Validated construction.
    pub fn new(header: DatasetHeader, samples: Vec<SampleRecord>) -> Result<Self, DataError> {
        let ds = Dataset {
            samples,
            n_sensors: header.n_sensors,
            n_classes: header.n_classes,
            t_max: header.t_max,
            sensor_names: header.sensor_names.filter(|v| !v.is_empty()),
            attr_names: header.attr_names.filter(|v| !v.is_empty()),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_sensors == 0 || self.n_classes == 0 || self.t_max == 0 {
            return Err(DataError::invalid("M, C and T_max must be positive"));
        }
        if let Some(names) = &self.sensor_names {
            if names.len() != self.n_sensors {
                return Err(DataError::invalid(format!(
                    "{} sensor names for M = {}",
                    names.len(),
                    self.n_sensors
                )));
            }
        }
        let attr_dim = self.attr_dim();
        for s in &self.samples {
            let fail = |msg: String| DataError::Sample { id: s.id.clone(), msg };
            self.check_sample(s, attr_dim).map_err(fail)?;
        }
        Ok(())
    }

    pub(crate) fn check_sample(&self, s: &SampleRecord, attr_dim: usize) -> Result<(), String> {
        if s.label >= self.n_classes {
            return Err(format!("label {} >= C = {}", s.label, self.n_classes));
        }
        if s.events.is_empty() {
            return Err("sample has no events".into());
        }
        s.validate(self.n_sensors)?;
        let t = s.distinct_times().len();
        if t > self.t_max {
            return Err(format!("{t} distinct timestamps exceed T_max = {}", self.t_max));
        }
        if s.static_attrs.len() != attr_dim {
            return Err(format!(
                "{} static attributes, expected {attr_dim}",
                s.static_attrs.len()
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Width of the static attribute vector (0 when absent).
    pub fn attr_dim(&self) -> usize {
        match &self.attr_names {
            Some(n) => n.len(),
            None => self.samples.first().map_or(0, |s| s.static_attrs.len()),
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            n_sensors: self.n_sensors,
            n_classes: self.n_classes,
            t_max: self.t_max,
            sensor_names: self.sensor_names.clone(),
            attr_names: self.attr_names.clone(),
        }
    }

    pub fn sensor_name(&self, u: usize) -> String {
        self.sensor_names
            .as_ref()
            .and_then(|n| n.get(u).cloned())
            .unwrap_or_else(|| u.to_string())
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn rejects_unsorted_and_duplicates() {
        let s = sample("a", 0, vec![ev(0, 2.0, 1.0), ev(1, 1.0, 1.0)]);
        assert!(s.validate(2).unwrap_err().contains("not sorted"));
        let s = sample("a", 0, vec![ev(1, 1.0, 1.0), ev(1, 1.0, 2.0)]);
        assert!(s.validate(2).unwrap_err().contains("duplicate"));
        let s = sample("a", 0, vec![ev(0, 1.0, 1.0), ev(1, 1.0, 2.0)]);
        assert!(s.validate(2).is_ok());
    }

    #[test]
    fn dataset_bounds() {
        let s = sample("a", 2, vec![ev(0, 0.0, 1.0)]);
        assert!(Dataset::new(header(2, 2, 4), vec![s.clone()]).is_err());
        let s = SampleRecord { label: 1, ..s };
        assert!(Dataset::new(header(2, 2, 4), vec![s.clone()]).is_ok());
        let s = SampleRecord {
            events: vec![ev(0, 0.0, 1.0), ev(0, 1.0, 1.0), ev(0, 2.0, 1.0)],
            ..s
        };
        assert!(Dataset::new(header(2, 2, 2), vec![s]).is_err());
    }

    #[test]
    fn distinct_times_merges_simultaneous() {
        let s = sample("a", 0, vec![ev(0, 0.5, 1.0), ev(2, 0.5, 1.0), ev(1, 3.0, 0.0)]);
        assert_eq!(s.distinct_times(), vec![0.5, 3.0]);
    }
}
