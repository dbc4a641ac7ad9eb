use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeaveOutMode {
    /// The same top-ranked sensors are deleted from every affected sample.
    Fixed,
    /// Each affected sample gets its own random sensor subset, zero-filled.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaveOutSpec {
    pub mode: LeaveOutMode,
    pub ratio: f64,
    pub seed: u64,
}

/// A corrupted copy of a dataset and the sensors silenced per sample.
#[derive(Debug, Clone)]
pub struct Corruption {
    pub dataset: Dataset,
    pub silenced: BTreeMap<usize, Vec<usize>>,
}

/// `floor(ratio · M)`, robust to representation error in `ratio`.
pub fn silenced_count(ratio: f64, n_sensors: usize) -> usize {
    (ratio * n_sensors as f64 + 1e-9).floor() as usize
}

/// Silence sensors in the samples listed in `affected` (validation and test).
///
/// Fixed mode removes every event of the first `floor(ratio·M)` sensors of
/// `ranking`. Random mode keeps the events of a per-sample random subset of
/// the same size but sets their values to zero. Other samples are untouched.
pub fn apply_leaveout(
    ds: &Dataset,
    affected: &[usize],
    spec: &LeaveOutSpec,
    ranking: Option<&[usize]>,
) -> Result<Corruption, DataError> {
    if !(0.0..=1.0).contains(&spec.ratio) {
        return Err(DataError::invalid(format!(
            "missing ratio {} outside [0, 1]",
            spec.ratio
        )));
    }
    let m = ds.n_sensors;
    let k = silenced_count(spec.ratio, m);
    let mut out = ds.clone();
    let mut silenced = BTreeMap::new();
    if k == 0 {
        return Ok(Corruption { dataset: out, silenced });
    }
    match spec.mode {
        LeaveOutMode::Fixed => {
            let ranking = ranking.ok_or_else(|| DataError::invalid("fixed leave-out needs a sensor ranking"))?;
            if ranking.len() != m {
                return Err(DataError::invalid(format!(
                    "ranking lists {} sensors, M = {m}",
                    ranking.len()
                )));
            }
            let mut gone = ranking[..k].to_vec();
            gone.sort_unstable();
            for &i in affected {
                out.samples[i].events.retain(|e| gone.binary_search(&e.sensor).is_err());
                silenced.insert(i, gone.clone());
            }
        }
        LeaveOutMode::Random => {
            for &i in affected {
                let mut rng = SplitMix64::derive(spec.seed, i as u64);
                let mut sensors: Vec<usize> = (0..m).collect();
                rng.shuffle(&mut sensors);
                let mut gone = sensors[..k].to_vec();
                gone.sort_unstable();
                for e in &mut out.samples[i].events {
                    if gone.binary_search(&e.sensor).is_ok() {
                        e.value = 0.0;
                    }
                }
                silenced.insert(i, gone);
            }
        }
    }
    Ok(Corruption { dataset: out, silenced })
}
