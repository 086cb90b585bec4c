//! Alert-review flagging and the three capacity-aware assignment policies.
//!
//! Every batch is sorted by model score: the top slice is declined outright,
//! the next `budget` cases become deferral candidates and the rest are
//! accepted. Candidates beyond the batch's total capacity are the
//! lowest-scored ones and are accepted before any policy runs. Policies then
//! place the remaining candidates on experts without exceeding `H[b][j]`.

mod optimal;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::CapacityScenario;
use crate::data::Instance;
use crate::expertise::OutcomeEstimator;
use crate::experts::PredictionTable;
use crate::{seed, Error, Result};

pub use optimal::{optimal_assign, COST_SCALE};

pub const DEFAULT_AUTO_DECLINE_RATE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Rel,
    Greedy,
    Linear,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Rel, Policy::Greedy, Policy::Linear];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Rel => "rel",
            Policy::Greedy => "greedy",
            Policy::Linear => "linear",
        }
    }

    pub fn needs_estimator(self) -> bool {
        self != Policy::Rel
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy '{s}'")))
    }
}

/// Who decides an instance; experts are team indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DecisionMaker {
    AutoDecline,
    AutoAccept,
    Expert(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssignmentRecord {
    pub instance_id: u64,
    pub batch: usize,
    pub decision_maker: DecisionMaker,
    pub final_decision: u8,
}

/// Positions into a batch slice, split by the alert-review rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlagResult {
    pub declined: Vec<usize>,
    /// Score-descending.
    pub candidates: Vec<usize>,
    pub accepted: Vec<usize>,
}

/// Sorts by descending score (ties by ascending id), declines the top
/// `round(auto_decline_rate * len)`, defers the next `budget` and accepts the rest.
pub fn flag_batch(scores: &[f64], ids: &[u64], auto_decline_rate: f64, budget: usize) -> Result<FlagResult> {
    if scores.len() != ids.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: ids.len(),
        });
    }
    if !(0.0..1.0).contains(&auto_decline_rate) {
        return Err(Error::Parameter(format!(
            "auto_decline_rate {auto_decline_rate} outside [0, 1)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(ids[*a].cmp(&ids[*b])));
    let n_decline = (auto_decline_rate * scores.len() as f64).round() as usize;
    let n_defer = budget.min(scores.len() - n_decline);
    let accepted = order.split_off(n_decline + n_defer);
    let candidates = order.split_off(n_decline);
    Ok(FlagResult {
        declined: order,
        candidates,
        accepted,
    })
}

/// Candidates in score order, already truncated to total capacity: seeded
/// shuffle, then slots dealt round-robin over a shuffled expert order.
/// Returns the expert index per candidate.
pub fn rel_random_assign<R: rand::Rng>(n_candidates: usize, capacities: &[u32], rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_candidates).collect();
    order.shuffle(rng);
    let mut experts: Vec<usize> = (0..capacities.len()).collect();
    experts.shuffle(rng);
    let mut remaining = capacities.to_vec();
    let mut slots = Vec::with_capacity(n_candidates);
    while slots.len() < n_candidates {
        let before = slots.len();
        for j in &experts {
            if slots.len() == n_candidates {
                break;
            }
            if remaining[*j] > 0 {
                remaining[*j] -= 1;
                slots.push(*j);
            }
        }
        assert!(slots.len() > before, "candidates must not exceed total capacity");
    }
    let mut out = vec![0; n_candidates];
    for (c, s) in order.into_iter().zip(slots) {
        out[c] = s;
    }
    out
}

/// Each row in order takes its cheapest column with capacity left (ties to the
/// lower column); `None` when every column is full.
pub fn greedy_assign(costs: &[f64], n: usize, capacities: &[u32]) -> Result<Vec<Option<usize>>> {
    let m = capacities.len();
    if costs.len() != n * m {
        return Err(Error::LengthMismatch {
            left: costs.len(),
            right: n * m,
        });
    }
    let mut remaining = capacities.to_vec();
    Ok((0..n)
        .map(|i| {
            let row = &costs[i * m..(i + 1) * m];
            let best = (0..m)
                .filter(|j| remaining[*j] > 0)
                .min_by(|a, b| row[*a].total_cmp(&row[*b]).then(a.cmp(b)));
            if let Some(j) = best {
                remaining[j] -= 1;
            }
            best
        })
        .collect())
}

/// Predicted deferral losses of one batch over the experts with capacity.
#[derive(Clone, Debug, PartialEq)]
pub struct LossMatrix {
    /// Team indices of the columns.
    pub experts: Vec<usize>,
    pub capacities: Vec<u32>,
    pub scores: Vec<f64>,
    /// Row-major, one row per candidate.
    pub values: Vec<f64>,
}

impl LossMatrix {
    pub fn build(
        estimator: &dyn OutcomeEstimator,
        candidates: &[&Instance],
        capacity_row: &[u32],
        lambda: f64,
    ) -> Result<Self> {
        let experts: Vec<usize> = (0..capacity_row.len()).filter(|j| capacity_row[*j] > 0).collect();
        let capacities = experts.iter().map(|j| capacity_row[*j]).collect();
        let mut values = Vec::with_capacity(candidates.len() * experts.len());
        let mut scores = Vec::with_capacity(candidates.len());
        for inst in candidates {
            let row = estimator.loss_row(inst, &experts, lambda)?;
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::Integrity(format!(
                    "loss {v} for instance {} is not finite and non-negative",
                    inst.id
                )));
            }
            values.extend(row);
            scores.push(inst.score_or_err()?);
        }
        Ok(LossMatrix {
            experts,
            capacities,
            scores,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.scores.len()
    }

    pub fn n_cols(&self) -> usize {
        self.experts.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols() + col]
    }
}

/// Everything a policy run reads besides the policy itself.
pub struct PolicyInputs<'a> {
    pub instances: &'a [Instance],
    pub scenario: &'a CapacityScenario,
    pub estimator: Option<&'a dyn OutcomeEstimator>,
    pub lambda: f64,
    pub auto_decline_rate: f64,
    /// Root of the per-batch random streams of ReL.
    pub seed: u64,
}

/// Decision makers for the members of one batch, aligned with `members`.
pub fn assign_batch(
    policy: Policy,
    inputs: &PolicyInputs<'_>,
    batch: usize,
    members: &[usize],
) -> Result<Vec<DecisionMaker>> {
    let insts: Vec<&Instance> = members.iter().map(|p| &inputs.instances[*p]).collect();
    let scores = insts.iter().map(|i| i.score_or_err()).collect::<Result<Vec<f64>>>()?;
    let ids: Vec<u64> = insts.iter().map(|i| i.id).collect();
    let row = inputs.scenario.capacity.row(batch);
    let flags = flag_batch(&scores, &ids, inputs.auto_decline_rate, inputs.scenario.params.budget(members.len()))?;

    let mut out = vec![DecisionMaker::AutoAccept; members.len()];
    for p in &flags.declined {
        out[*p] = DecisionMaker::AutoDecline;
    }
    let total_capacity: usize = row.iter().map(|c| *c as usize).sum();
    let mut kept = flags.candidates;
    kept.truncate(total_capacity);
    if kept.is_empty() {
        return Ok(out);
    }

    match policy {
        Policy::Rel => {
            let present: Vec<usize> = (0..row.len()).filter(|j| row[*j] > 0).collect();
            let caps: Vec<u32> = present.iter().map(|j| row[*j]).collect();
            let mut rng = seed::rng(inputs.seed, "policy/rel", &[batch as u64]);
            for (p, col) in kept.iter().zip(rel_random_assign(kept.len(), &caps, &mut rng)) {
                out[*p] = DecisionMaker::Expert(present[col]);
            }
        }
        Policy::Greedy | Policy::Linear => {
            let estimator = inputs
                .estimator
                .ok_or_else(|| Error::Config(format!("policy '{policy}' needs an outcome estimator")))?;
            // batch order
            kept.sort_unstable();
            let rows: Vec<&Instance> = kept.iter().map(|p| insts[*p]).collect();
            let matrix = LossMatrix::build(estimator, &rows, row, inputs.lambda)?;
            let cols: Vec<Option<usize>> = if policy == Policy::Greedy {
                greedy_assign(&matrix.values, matrix.n_rows(), &matrix.capacities)?
            } else {
                optimal_assign(&matrix.values, matrix.n_rows(), &matrix.capacities)?
                    .into_iter()
                    .map(Some)
                    .collect()
            };
            for (p, col) in kept.iter().zip(cols) {
                if let Some(c) = col {
                    out[*p] = DecisionMaker::Expert(matrix.experts[c]);
                }
            }
        }
    }
    Ok(out)
}

/// Runs a policy over every batch of the scenario and resolves final decisions
/// from the prediction table. Records are grouped by batch, in instance order.
pub fn run_policy(policy: Policy, inputs: &PolicyInputs<'_>, predictions: &PredictionTable) -> Result<Vec<AssignmentRecord>> {
    if inputs.scenario.batches.batch_of.len() != inputs.instances.len() {
        return Err(Error::LengthMismatch {
            left: inputs.scenario.batches.batch_of.len(),
            right: inputs.instances.len(),
        });
    }
    if policy.needs_estimator() && inputs.estimator.is_none() {
        return Err(Error::Config(format!("policy '{policy}' needs an outcome estimator")));
    }
    let members = inputs.scenario.batches.members();
    let per_batch: Vec<Vec<AssignmentRecord>> = members
        .par_iter()
        .enumerate()
        .map(|(b, mem)| {
            let makers = assign_batch(policy, inputs, b, mem)?;
            mem.iter()
                .zip(makers)
                .map(|(p, dm)| {
                    let inst = &inputs.instances[*p];
                    let final_decision = match dm {
                        DecisionMaker::AutoDecline => 1,
                        DecisionMaker::AutoAccept => 0,
                        DecisionMaker::Expert(j) => predictions.get(inst.id, j).ok_or_else(|| {
                            Error::Integrity(format!("no prediction for instance {} by expert index {j}", inst.id))
                        })?,
                    };
                    Ok(AssignmentRecord {
                        instance_id: inst.id,
                        batch: b,
                        decision_maker: dm,
                        final_decision,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_batch.into_iter().flatten().collect())
}

/// Expected cost-sensitive loss of a set of routing decisions given true labels:
/// `lambda` per auto-declined negative, 1 per auto-accepted positive, and
/// the expert's closed-form expected cost otherwise.
pub fn expected_loss(
    instances: &[&Instance],
    makers: &[DecisionMaker],
    oracle: &dyn OutcomeEstimator,
    lambda: f64,
) -> Result<f64> {
    if instances.len() != makers.len() {
        return Err(Error::LengthMismatch {
            left: instances.len(),
            right: makers.len(),
        });
    }
    let mut total = 0.0;
    for (inst, dm) in instances.iter().zip(makers) {
        total += match dm {
            DecisionMaker::AutoDecline => lambda * f64::from(1 - inst.label),
            DecisionMaker::AutoAccept => f64::from(inst.label),
            DecisionMaker::Expert(j) => oracle.loss_row(inst, &[*j], lambda)?[0],
        };
    }
    Ok(total)
}

/// Checks `count(assigned to j in batch b) <= H[b][j]` for all batches and experts.
pub fn capacity_violations(records: &[AssignmentRecord], scenario: &CapacityScenario) -> usize {
    let h = &scenario.capacity;
    let mut load = vec![vec![0u32; h.n_experts]; h.rows.len()];
    for r in records {
        if let DecisionMaker::Expert(j) = r.decision_maker {
            load[r.batch][j] += 1;
        }
    }
    load.iter()
        .zip(&h.rows)
        .map(|(l, cap)| l.iter().zip(cap).filter(|(a, c)| a > c).count())
        .sum()
}

pub fn write_assignments_csv(records: &[AssignmentRecord], expert_ids: &[String], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["instance_id", "batch", "decision_maker", "final_decision"])?;
    for r in records {
        let dm = match r.decision_maker {
            DecisionMaker::AutoDecline => "auto_decline".to_owned(),
            DecisionMaker::AutoAccept => "auto_accept".to_owned(),
            DecisionMaker::Expert(j) => expert_ids
                .get(j)
                .cloned()
                .ok_or_else(|| Error::UnknownExpert(format!("team index {j}")))?,
        };
        w.write_record([
            r.instance_id.to_string(),
            r.batch.to_string(),
            dm,
            r.final_decision.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
