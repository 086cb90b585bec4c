//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use defersim::data::synthetic::{self, SyntheticConfig};
use defersim::data::{
    fit_reference_scorer, make_temporal_splits, select_threshold, FeatureScaler, Instance, Scorer, ScorerConfig, TemporalSplit,
};
use defersim::experts::ExpertParams;

/// Score transform by interpolation through (0, -1/2), (t, 0), (1, 1/2).
pub fn transform(m: f64, t: f64) -> f64 {
    if m <= t {
        -0.5 + 0.5 * (m / t)
    } else {
        0.5 * (m - t) / (1.0 - t)
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Closed-form `(p_fp, p_fn)` of an expert.
pub fn flip_probs(e: &ExpertParams, x: &[f64], m: f64, t: f64) -> (f64, f64) {
    let mut num = e.w_m * transform(m, t);
    let mut norm = e.w_m * e.w_m;
    for (w, v) in e.w.iter().zip(x) {
        num += w * v;
        norm += w * w;
    }
    let z = if e.alpha == 0.0 || norm == 0.0 { 0.0 } else { num / norm.sqrt() };
    (logistic(e.beta0 - e.alpha * z), logistic(e.beta1 + e.alpha * z))
}

/// Expected `lambda * FP + FN` of routing `inst` to `e`.
pub fn expected_cost(e: &ExpertParams, inst: &Instance, t: f64, lambda: f64) -> f64 {
    let (p_fp, p_fn) = flip_probs(e, &inst.features, inst.score.unwrap(), t);
    if inst.label == 0 {
        lambda * p_fp
    } else {
        p_fn
    }
}

/// Row-order total of an assignment.
pub fn assignment_cost(costs: &[f64], m: usize, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, j)| costs[i * m + j]).sum()
}

/// Minimum over every capacity-feasible assignment, by enumeration.
pub fn brute_force_min(costs: &[f64], n: usize, caps: &[u32]) -> Option<f64> {
    fn go(i: usize, n: usize, costs: &[f64], left: &mut [u32], cur: &mut Vec<usize>, best: &mut Option<f64>) {
        let m = left.len();
        if i == n {
            let c = assignment_cost(costs, m, cur);
            if best.is_none_or(|b| c < b) {
                *best = Some(c);
            }
            return;
        }
        for j in 0..m {
            if left[j] > 0 {
                left[j] -= 1;
                cur.push(j);
                go(i + 1, n, costs, left, cur, best);
                cur.pop();
                left[j] += 1;
            }
        }
    }
    let mut best = None;
    go(0, n, costs, &mut caps.to_vec(), &mut Vec::new(), &mut best);
    best
}

/// Textbook successive shortest paths with Bellman-Ford on the full
/// source/row/column/sink residual network. Returns the optimal total.
pub fn min_cost_flow(costs: &[f64], n: usize, caps: &[u32]) -> Option<f64> {
    let m = caps.len();
    let (src, sink) = (n + m, n + m + 1);
    let nodes = n + m + 2;
    // (to, capacity, cost, reverse index)
    let mut graph: Vec<Vec<(usize, i64, f64, usize)>> = vec![Vec::new(); nodes];
    let add = |g: &mut Vec<Vec<(usize, i64, f64, usize)>>, a: usize, b: usize, cap: i64, cost: f64| {
        let ra = g[b].len();
        let rb = g[a].len();
        g[a].push((b, cap, cost, ra));
        g[b].push((a, 0, -cost, rb));
    };
    for i in 0..n {
        add(&mut graph, src, i, 1, 0.0);
        for j in 0..m {
            add(&mut graph, i, n + j, 1, costs[i * m + j]);
        }
    }
    for j in 0..m {
        add(&mut graph, n + j, sink, i64::from(caps[j]), 0.0);
    }
    let mut total = 0.0;
    for _ in 0..n {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; nodes];
        dist[src] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for a in 0..nodes {
                if dist[a].is_infinite() {
                    continue;
                }
                for (k, &(b, cap, cost, _)) in graph[a].iter().enumerate() {
                    if cap > 0 && dist[a] + cost < dist[b] - 1e-12 {
                        dist[b] = dist[a] + cost;
                        prev[b] = Some((a, k));
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink].is_infinite() {
            return None;
        }
        let mut v = sink;
        while let Some((a, k)) = prev[v] {
            let rev = graph[a][k].3;
            graph[a][k].1 -= 1;
            graph[v][rev].1 += 1;
            v = a;
        }
        total += dist[sink];
    }
    Some(total)
}

pub fn synthetic(months: u32, per_month: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        months,
        per_month,
        prevalence: 0.05,
        seed,
        ..SyntheticConfig::default()
    }
}

/// Scored synthetic sample with its protected feature index and operating
/// threshold. The scorer trains on months 1-3, the threshold hits a 5% FPR on
/// month 4 and features are standardized over the whole set.
pub struct ScoredSample {
    pub instances: Vec<Instance>,
    pub protected_index: usize,
    pub threshold: f64,
}

pub fn scored_sample(config: &SyntheticConfig) -> ScoredSample {
    let dataset = synthetic::generate(config);
    let splits = make_temporal_splits(&dataset, &TemporalSplit::default()).unwrap();
    let fitted = fit_reference_scorer(&splits.classifier_train, &splits.classifier_val, &ScorerConfig::default()).unwrap();
    let val_scores: Vec<f64> = splits.classifier_val.iter().map(|i| fitted.model.score(&i.features)).collect();
    let val_labels: Vec<u8> = splits.classifier_val.iter().map(|i| i.label).collect();
    let threshold = select_threshold(&val_scores, &val_labels, 0.05).unwrap();
    let mut all = dataset.instances.clone();
    for inst in &mut all {
        inst.score = Some(fitted.model.score(&inst.features));
    }
    let scaler = FeatureScaler::fit(&all).unwrap();
    ScoredSample {
        instances: scaler.apply(&all),
        protected_index: dataset.protected_index(),
        threshold,
    }
}

/// Writes a run config over the synthetic generator into `dir`.
pub fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}
