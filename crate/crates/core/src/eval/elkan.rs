use serde::Serialize;

use super::check_lengths;
use crate::{Error, Result};

/// Outcome of a threshold sweep against the cost-optimal threshold `lambda / (1 + lambda)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ElkanReport {
    pub lambda: f64,
    pub expected_threshold: f64,
    pub step: f64,
    /// All sweep thresholds attaining the minimum loss.
    pub optimal_thresholds: Vec<f64>,
    pub min_loss: f64,
    pub tied: bool,
    /// Every optimal sweep threshold lies within one step of the expected one.
    pub consistent: bool,
}

/// Sweeps thresholds `i / steps`, `i = 0..=steps`, flagging `score >= threshold`,
/// and locates the minimizers of `lambda * N(FP) + N(FN)`.
pub fn elkan_threshold_consistency_check(
    scores: &[f64],
    labels: &[u8],
    lambda: f64,
    steps: usize,
) -> Result<ElkanReport> {
    check_lengths(scores.len(), labels.len())?;
    if steps == 0 || !(lambda >= 0.0) {
        return Err(Error::Parameter("sweep needs steps >= 1 and lambda >= 0".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    // Walking thresholds upward unflags instances in score order.
    let total_neg = labels.iter().filter(|y| **y == 0).count() as u64;
    let (mut fp, mut fn_) = (total_neg, 0u64);
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        while cursor < order.len() && scores[order[cursor]] < t {
            if labels[order[cursor]] == 0 {
                fp -= 1;
            } else {
                fn_ += 1;
            }
            cursor += 1;
        }
        losses.push((t, lambda * fp as f64 + fn_ as f64));
    }
    let min_loss = losses.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
    let optimal_thresholds: Vec<f64> = losses.iter().filter(|l| l.1 == min_loss).map(|l| l.0).collect();
    let step = 1.0 / steps as f64;
    let expected_threshold = lambda / (1.0 + lambda);
    let slack = step * (1.0 + 1e-9);
    let consistent = optimal_thresholds
        .iter()
        .all(|t| (t - expected_threshold).abs() <= slack);
    Ok(ElkanReport {
        lambda,
        expected_threshold,
        step,
        tied: optimal_thresholds.len() > 1,
        optimal_thresholds,
        min_loss,
        consistent,
    })
}

/// Perfectly calibrated data: scores `k / levels` for `k = 1..levels`, each held
/// by `per_level` instances of which exactly `round(per_level * k / levels)` are positive.
pub fn calibrated_grid(levels: usize, per_level: usize) -> (Vec<f64>, Vec<u8>) {
    let mut scores = Vec::with_capacity(levels.saturating_sub(1) * per_level);
    let mut labels = Vec::with_capacity(scores.capacity());
    for k in 1..levels {
        let p = k as f64 / levels as f64;
        let positives = (per_level as f64 * p).round() as usize;
        for i in 0..per_level {
            scores.push(p);
            labels.push(u8::from(i < positives));
        }
    }
    (scores, labels)
}
