use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// train / val / test
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            fractions: [0.8, 0.1, 0.1],
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Validation and test indices, the samples evaluation corruptions touch.
    pub fn eval_indices(&self) -> Vec<usize> {
        self.val.iter().chain(&self.test).copied().collect()
    }
}

/// Stratified, seeded train/val/test partition.
///
/// Global split sizes are `round(f·N)` for train and val, test takes the
/// rest; each class is spread over the splits so that its
/// per-split count is within one sample of its proportional share.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<Split, DataError> {
    let [ft, fv, fs] = spec.fractions;
    if spec.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(DataError::invalid(format!(
            "split fractions {:?} must be in [0,1] and sum to 1",
            spec.fractions
        )));
    }
    let n = ds.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes];
    for (i, s) in ds.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut rng = SplitMix64::new(spec.seed);
    for (c, members) in by_class.iter_mut().enumerate() {
        if !members.is_empty() && members.len() < 3 {
            return Err(DataError::invalid(format!(
                "class {c} has {} samples, fewer than the 3 splits",
                members.len()
            )));
        }
        rng.shuffle(members);
    }

    let n_train = (ft * n as f64).round() as usize;
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
    let targets = [n_train, n_val, n - n_train - n_val];

    // counts[c][s]
    let fr = [ft, fv, fs];
    let mut counts: Vec<[usize; 3]> = by_class
        .iter()
        .map(|m| {
            let nc = m.len() as f64;
            [0, 1, 2].map(|s| (fr[s] * nc).floor() as usize)
        })
        .collect();
    let mut need: Vec<isize> = (0..3)
        .map(|s| targets[s] as isize - counts.iter().map(|c| c[s] as isize).sum::<isize>())
        .collect();
    let mut left: Vec<usize> = by_class
        .iter()
        .zip(&counts)
        .map(|(m, c)| m.len() - c.iter().sum::<usize>())
        .collect();
    // Each class hands its leftover units to distinct splits, the neediest
    // first (larger remainder breaks ties). Serving classes with the most
    // leftovers first makes this greedy exact for unit-capacity cells.
    let mut class_order: Vec<usize> = (0..by_class.len()).collect();
    class_order.sort_by_key(|&c| std::cmp::Reverse(left[c]));
    for c in class_order {
        let nc = by_class[c].len() as f64;
        let mut splits = [0usize, 1, 2];
        splits.sort_by(|&a, &b| {
            let rem = |s: usize| fr[s] * nc - (fr[s] * nc).floor();
            need[b].cmp(&need[a]).then(rem(b).total_cmp(&rem(a))).then(a.cmp(&b))
        });
        for s in splits {
            if left[c] > 0 && need[s] > 0 {
                counts[c][s] += 1;
                left[c] -= 1;
                need[s] -= 1;
            }
        }
    }
    for c in 0..by_class.len() {
        for s in 0..3 {
            while left[c] > 0 && need[s] > 0 {
                counts[c][s] += 1;
                left[c] -= 1;
                need[s] -= 1;
            }
        }
    }

    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (members, cnt) in by_class.iter().zip(&counts) {
        let (a, rest) = members.split_at(cnt[0]);
        let (b, c) = rest.split_at(cnt[1]);
        out.train.extend_from_slice(a);
        out.val.extend_from_slice(b);
        out.test.extend_from_slice(c);
    }
    for part in [&mut out.train, &mut out.val, &mut out.test] {
        rng.shuffle(part);
    }
    Ok(out)
}
