//! Exact capacity-constrained assignment by successive shortest paths.
//!
//! Candidates are inserted one at a time. The residual network is kept on the
//! expert nodes only: an edge `a -> b` stands for moving the cheapest-to-move
//! candidate currently held by `a` over to `b`, with weight
//! `min_{k in A(a)} (c[k][b] - c[k][a])`. Each insertion routes the new
//! candidate along a shortest path from the source to an expert with spare
//! capacity, which keeps the partial assignment optimal for the candidates
//! inserted so far. Costs are scaled to integers so label-correcting search
//! terminates exactly.

use std::collections::VecDeque;

use crate::{Error, Result};

/// Integer resolution of the loss values.
pub const COST_SCALE: f64 = 1e9;

const NONE: usize = usize::MAX;

fn quantize(v: f64) -> Result<i64> {
    if !v.is_finite() || v.abs() > 1e9 {
        return Err(Error::Parameter(format!("loss value {v} is not a usable finite cost")));
    }
    Ok((v * COST_SCALE).round() as i64)
}

/// Minimum-cost assignment of every row of the `n x m` row-major `costs` to a
/// column, with column `j` taking at most `capacities[j]` rows.
pub fn optimal_assign(costs: &[f64], n: usize, capacities: &[u32]) -> Result<Vec<usize>> {
    let m = capacities.len();
    if costs.len() != n * m {
        return Err(Error::LengthMismatch {
            left: costs.len(),
            right: n * m,
        });
    }
    let total: u64 = capacities.iter().map(|c| u64::from(*c)).sum();
    if total < n as u64 {
        return Err(Error::Infeasible(format!(
            "{n} candidates exceed total capacity {total}"
        )));
    }
    let c: Vec<i64> = costs.iter().map(|v| quantize(*v)).collect::<Result<_>>()?;
    let cost = |k: usize, j: usize| c[k * m + j];

    let mut assigned = vec![NONE; n];
    let mut held: Vec<Vec<usize>> = vec![Vec::new(); m];
    // edge[a][b] = (weight, candidate) of the cheapest move a -> b
    let mut edge: Vec<(i64, usize)> = vec![(i64::MAX, NONE); m * m];
    let refresh = |a: usize, held: &[Vec<usize>], edge: &mut [(i64, usize)]| {
        for b in 0..m {
            let mut best = (i64::MAX, NONE);
            if b != a {
                for k in &held[a] {
                    let w = cost(*k, b) - cost(*k, a);
                    if w < best.0 {
                        best = (w, *k);
                    }
                }
            }
            edge[a * m + b] = best;
        }
    };

    let mut dist = vec![0i64; m];
    let mut pred: Vec<(usize, usize)> = vec![(NONE, NONE); m];
    let mut in_queue = vec![false; m];
    let mut enqueued = vec![0usize; m];
    let mut queue = VecDeque::with_capacity(m);
    let mut touched = Vec::new();

    for i in 0..n {
        for j in 0..m {
            dist[j] = cost(i, j);
            pred[j] = (NONE, NONE);
            in_queue[j] = true;
            enqueued[j] = 0;
            queue.push_back(j);
        }
        while let Some(a) = queue.pop_front() {
            in_queue[a] = false;
            if held[a].is_empty() {
                continue;
            }
            for b in 0..m {
                let (w, k) = edge[a * m + b];
                if k == NONE {
                    continue;
                }
                let nd = dist[a] + w;
                if nd < dist[b] {
                    dist[b] = nd;
                    pred[b] = (a, k);
                    if !in_queue[b] {
                        enqueued[b] += 1;
                        if enqueued[b] > m {
                            return Err(Error::Integrity("negative cycle in assignment residual graph".into()));
                        }
                        in_queue[b] = true;
                        queue.push_back(b);
                    }
                }
            }
        }
        let mut end = NONE;
        for j in 0..m {
            if (held[j].len() as u64) < u64::from(capacities[j]) && (end == NONE || dist[j] < dist[end]) {
                end = j;
            }
        }
        debug_assert!(end != NONE);

        touched.clear();
        let mut at = end;
        loop {
            touched.push(at);
            let (from, k) = pred[at];
            if from == NONE {
                assigned[i] = at;
                held[at].push(i);
                break;
            }
            let pos = held[from].iter().position(|x| *x == k).expect("moved candidate is held");
            held[from].swap_remove(pos);
            held[at].push(k);
            assigned[k] = at;
            at = from;
        }
        for a in &touched {
            refresh(*a, &held, &mut edge);
        }
    }
    Ok(assigned)
}
