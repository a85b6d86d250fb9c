use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RiskError;

/// Area under the ROC curve from the rank-sum statistic, tied scores
/// sharing their mean rank. `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Ranks doubled so that tie midpoints stay integral.
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank_sum2 += mid2;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as u64, n_neg as u64);
    // U = R_pos - p(p+1)/2, doubled.
    let u2 = pos_rank_sum2 - p * (p + 1);
    Some(u2 as f64 / (2 * p * q) as f64)
}

pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| u8::from(**s >= threshold) == **l)
        .count();
    hits as f64 / labels.len() as f64
}

/// F1 of the positive class; 0 when nothing is predicted or present.
pub fn f1(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (s, l) in scores.iter().zip(labels) {
        match (*s >= threshold, *l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    pub fn contains_point(&self) -> bool {
        self.lo <= self.point && self.point <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub positives: usize,
    pub threshold: f64,
    pub accuracy: Estimate,
    pub auc: Estimate,
    pub f1: Estimate,
    pub n_boot: usize,
    /// Resamples holding a single class, left out of every interval.
    pub skipped: usize,
    pub seed: u64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn interval(point: f64, mut samples: Vec<f64>) -> Estimate {
    if samples.is_empty() {
        return Estimate {
            point,
            lo: point,
            hi: point,
        };
    }
    samples.sort_by(f64::total_cmp);
    Estimate {
        point,
        lo: quantile(&samples, 0.025),
        hi: quantile(&samples, 0.975),
    }
}

/// Point metrics plus 95% percentile intervals over `n_boot` resamples of
/// the scored set. Resample `i` draws from its own ChaCha stream, so the
/// result does not depend on thread scheduling.
pub fn evaluate_scores(scores: &[f64], labels: &[u8], n_boot: usize, seed: u64) -> Result<MetricsReport, RiskError> {
    let threshold = 0.5;
    let point_auc = auc(scores, labels).ok_or(RiskError::SingleClass)?;
    let n = labels.len();
    let draws: Vec<Option<(f64, f64, f64)>> = (0..n_boot)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let s: Vec<f64> = idx.iter().map(|&k| scores[k]).collect();
            let l: Vec<u8> = idx.iter().map(|&k| labels[k]).collect();
            let a = auc(&s, &l)?;
            Some((accuracy(&s, &l, threshold), a, f1(&s, &l, threshold)))
        })
        .collect();
    let kept: Vec<(f64, f64, f64)> = draws.iter().flatten().copied().collect();
    Ok(MetricsReport {
        n,
        positives: labels.iter().filter(|&&l| l == 1).count(),
        threshold,
        accuracy: interval(accuracy(scores, labels, threshold), kept.iter().map(|k| k.0).collect()),
        auc: interval(point_auc, kept.iter().map(|k| k.1).collect()),
        f1: interval(f1(scores, labels, threshold), kept.iter().map(|k| k.2).collect()),
        n_boot,
        skipped: n_boot - kept.len(),
        seed,
    })
}
