use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Split};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum GroupRule {
    /// `attr < threshold`
    Below(f64),
    /// `attr == category`
    Equals(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub attr_index: usize,
    pub rule: GroupRule,
    /// Train on the samples failing the rule instead.
    pub invert: bool,
    pub seed: u64,
}

impl GroupSpec {
    fn matches(&self, attr: f64) -> bool {
        let hit = match self.rule {
            GroupRule::Below(t) => attr < t,
            GroupRule::Equals(c) => attr == c,
        };
        hit != self.invert
    }
}

/// Train on one attribute-defined group, evaluate on the other.
///
/// The held-out group is shuffled under `spec.seed` and halved into
/// validation and test (the odd sample goes to test).
pub fn group_split(ds: &Dataset, spec: &GroupSpec) -> Result<Split, DataError> {
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let a = *s.static_attrs.get(spec.attr_index).ok_or_else(|| DataError::Sample {
            id: s.id.clone(),
            msg: format!("no static attribute at index {}", spec.attr_index),
        })?;
        if spec.matches(a) {
            train.push(i);
        } else {
            held.push(i);
        }
    }
    if train.is_empty() || held.is_empty() {
        return Err(DataError::invalid(format!(
            "group split leaves an empty group ({} train, {} held out)",
            train.len(),
            held.len()
        )));
    }
    let mut rng = SplitMix64::new(spec.seed);
    rng.shuffle(&mut train);
    rng.shuffle(&mut held);
    let test = held.split_off(held.len() / 2);
    Ok(Split { train, val: held, test })
}
