//! Classification metrics.
//!
//! AUROC counts tied scores as half-concordant (Mann-Whitney). AUPRC is
//! average precision: precision summed over recall increments, one step per
//! distinct score, no interpolation. Precision, recall and F1 are macro
//! averages over the classes present in either truth or prediction, with
//! zero-division yielding 0.

use serde::{Deserialize, Serialize};

/// AUROC of `scores` for the positive class, `None` if either class is empty.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (mid)ranks of positives, 1-based.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| positive[k]).count();
        rank_sum += mid * pos_in_group as f64;
        i = j;
    }
    let np = n_pos as f64;
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Average precision, `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Some(ap)
}

/// Lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn macro_scores(truth: &[usize], pred: &[usize], n_classes: usize) -> MacroScores {
    assert_eq!(truth.len(), pred.len());
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fneg = vec![0usize; n_classes];
    let mut present = vec![false; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        present[t] = true;
        present[p] = true;
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fneg[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut ps, mut rs, mut fs, mut k) = (0.0, 0.0, 0.0, 0usize);
    for c in (0..n_classes).filter(|&c| present[c]) {
        let p = ratio(tp[c], tp[c] + fp[c]);
        let r = ratio(tp[c], tp[c] + fneg[c]);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        ps += p;
        rs += r;
        fs += f;
        k += 1;
    }
    let k = k.max(1) as f64;
    MacroScores {
        precision: ps / k,
        recall: rs / k,
        f1: fs / k,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    /// Absent when the evaluated labels contain a single class.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsReport {
    /// From per-sample class probabilities. Binary tasks score class 1;
    /// multi-class AUROC/AUPRC are one-vs-rest macro averages.
    pub fn from_probs(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Self {
        assert_eq!(probs.len(), labels.len());
        let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let correct = pred.iter().zip(labels).filter(|(p, t)| p == t).count();
        let m = macro_scores(labels, &pred, n_classes);
        let (auroc_v, auprc_v) = if n_classes == 2 {
            let s: Vec<f64> = probs.iter().map(|p| p[1]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
            (
                auroc(&s, &pos),
                if auroc(&s, &pos).is_some() {
                    average_precision(&s, &pos)
                } else {
                    None
                },
            )
        } else {
            let mut ra = Vec::new();
            let mut rp = Vec::new();
            for c in 0..n_classes {
                let s: Vec<f64> = probs.iter().map(|p| p[c]).collect();
                let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                if let Some(a) = auroc(&s, &pos) {
                    ra.push(a);
                    rp.push(average_precision(&s, &pos).unwrap_or(0.0));
                }
            }
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            (mean(&ra), mean(&rp))
        };
        Self {
            n: labels.len(),
            auroc: auroc_v,
            auprc: auprc_v,
            accuracy: if labels.is_empty() {
                0.0
            } else {
                correct as f64 / labels.len() as f64
            },
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation (n − 1); a single value has std 0.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub runs: usize,
    pub auroc: Option<MeanStd>,
    pub auprc: Option<MeanStd>,
    pub accuracy: Option<MeanStd>,
    pub precision: Option<MeanStd>,
    pub recall: Option<MeanStd>,
    pub f1: Option<MeanStd>,
}

impl MetricSummary {
    pub fn of(reports: &[MetricsReport]) -> Self {
        let pick =
            |f: &dyn Fn(&MetricsReport) -> Option<f64>| MeanStd::of(&reports.iter().filter_map(f).collect::<Vec<_>>());
        Self {
            runs: reports.len(),
            auroc: pick(&|r| r.auroc),
            auprc: pick(&|r| r.auprc),
            accuracy: pick(&|r| Some(r.accuracy)),
            precision: pick(&|r| Some(r.precision)),
            recall: pick(&|r| Some(r.recall)),
            f1: pick(&|r| Some(r.f1)),
        }
    }
}

/// Median of a non-empty slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
