//! Batch vectors and per-batch expert capacity matrices.

mod grid;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::experts::ExpertGroup;
use crate::{seed, Error, Result};

pub use grid::{enumerate_grid, GridConfig, ScenarioGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Homogeneous,
    Variable,
}

impl Distribution {
    /// Relative spread of the capacity draws.
    pub fn sigma(self) -> f64 {
        match self {
            Distribution::Homogeneous => 0.0,
            Distribution::Variable => 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    All,
    Standard,
    Unfair,
    Agreeing,
    Sparse,
}

impl Pool {
    pub fn admits(self, group: ExpertGroup) -> bool {
        match self {
            Pool::All => true,
            Pool::Standard => group == ExpertGroup::Standard,
            Pool::Unfair => group == ExpertGroup::Unfair,
            Pool::Agreeing => group == ExpertGroup::Agreeing,
            Pool::Sparse => group == ExpertGroup::Sparse,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pool::All => "all",
            Pool::Standard => "standard",
            Pool::Unfair => "unfair",
            Pool::Agreeing => "agreeing",
            Pool::Sparse => "sparse",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSeeds {
    pub batch: u64,
    pub absence: u64,
    pub capacity: u64,
}

impl ScenarioSeeds {
    pub fn from_master(seed: u64) -> Self {
        ScenarioSeeds {
            batch: seed::derive(seed, "scenario/batch", &[]),
            absence: seed::derive(seed, "scenario/absence", &[]),
            capacity: seed::derive(seed, "scenario/capacity", &[]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub pool: Pool,
    pub batch_size: usize,
    pub deferral_rate: f64,
    pub distribution: Distribution,
    pub absence_rate: f64,
    /// Grid-level seed the stream seeds were derived from.
    pub seed: u64,
    pub seeds: ScenarioSeeds,
}

impl ScenarioParams {
    pub fn new(
        pool: Pool,
        batch_size: usize,
        deferral_rate: f64,
        distribution: Distribution,
        absence_rate: f64,
        seed: u64,
    ) -> Self {
        ScenarioParams {
            pool,
            batch_size,
            deferral_rate,
            distribution,
            absence_rate,
            seed,
            seeds: ScenarioSeeds::from_master(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        if !(self.deferral_rate > 0.0 && self.deferral_rate < 1.0) {
            return Err(Error::Parameter(format!(
                "deferral_rate {} outside (0, 1)",
                self.deferral_rate
            )));
        }
        if !(self.absence_rate >= 0.0 && self.absence_rate < 1.0) {
            return Err(Error::Parameter(format!(
                "absence_rate {} outside [0, 1)",
                self.absence_rate
            )));
        }
        Ok(())
    }

    /// Properties without the seed, shared by all seeds of a grid row.
    pub fn combo_label(&self) -> String {
        format!(
            "{}_b{}_d{}_a{}_{}",
            self.pool.name(),
            self.batch_size,
            self.deferral_rate,
            self.absence_rate,
            match self.distribution {
                Distribution::Homogeneous => "hom",
                Distribution::Variable => "var",
            }
        )
    }

    pub fn label(&self) -> String {
        format!("{}_s{}", self.combo_label(), self.seed)
    }

    pub fn budget(&self, batch_len: usize) -> usize {
        deferral_budget(self.deferral_rate, batch_len)
    }
}

/// Number of cases of a batch that may go to the team.
pub fn deferral_budget(rate: f64, batch_len: usize) -> usize {
    (rate * batch_len as f64).round() as usize
}

/// Batch index per instance plus batch lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_of: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl BatchPlan {
    pub fn n_batches(&self) -> usize {
        self.sizes.len()
    }

    /// Positions (into the instance slice) of each batch, in instance order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|s| Vec::with_capacity(*s)).collect();
        for (i, b) in self.batch_of.iter().enumerate() {
            out[*b].push(i);
        }
        out
    }
}

/// Chops a seeded permutation of `0..n` into consecutive batches of `batch_size`;
/// the last batch may be shorter.
pub fn build_batches(n: usize, batch_size: usize, seed: u64) -> Result<BatchPlan> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch_size must be >= 1".into()));
    }
    if batch_size > n {
        log::warn!("batch size {batch_size} exceeds {n} instances; using a single batch");
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, "batches", &[]));
    let mut batch_of = vec![0; n];
    for (pos, i) in order.iter().enumerate() {
        batch_of[*i] = pos / batch_size;
    }
    let n_batches = n.div_ceil(batch_size);
    let sizes = (0..n_batches)
        .map(|b| (n - b * batch_size).min(batch_size))
        .collect();
    Ok(BatchPlan { batch_of, sizes })
}

/// `H[b][j]`: cases expert `j` may decide in batch `b`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityMatrix {
    pub n_experts: usize,
    pub rows: Vec<Vec<u32>>,
}

impl CapacityMatrix {
    pub fn row(&self, batch: usize) -> &[u32] {
        &self.rows[batch]
    }

    pub fn row_sum(&self, batch: usize) -> usize {
        self.rows[batch].iter().map(|c| *c as usize).sum()
    }

    pub fn write_csv(&self, expert_ids: &[String], path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["batch".to_owned()];
        header.extend(expert_ids.iter().cloned());
        w.write_record(&header)?;
        for (b, row) in self.rows.iter().enumerate() {
            let mut rec = vec![b.to_string()];
            rec.extend(row.iter().map(u32::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits `budget` into integers proportional to `weights` (largest remainder;
/// ties go to the earlier slot).
fn largest_remainder(weights: &[f64], budget: usize) -> Vec<u32> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w * budget as f64 / total).collect();
    let mut out: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
    let assigned: usize = out.iter().map(|v| *v as usize).sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|a, b| {
        let ra = quotas[*a] - quotas[*a].floor();
        let rb = quotas[*b] - quotas[*b].floor();
        rb.total_cmp(&ra).then(a.cmp(b))
    });
    for j in order.into_iter().take(budget.saturating_sub(assigned)) {
        out[j] += 1;
    }
    out
}

/// Draws the capacity matrix for one scenario.
///
/// Per batch: experts outside the pool get 0; a fresh subset of
/// `round(absence_rate * pool size)` pool members is absent; the remaining
/// experts share `round(deferral_rate * batch length)` cases either evenly or
/// from clamped `N(mu, 0.2 mu)` draws rescaled to the budget.
pub fn sample_capacity_matrix(
    batch_sizes: &[usize],
    groups: &[ExpertGroup],
    params: &ScenarioParams,
) -> Result<CapacityMatrix> {
    params.validate()?;
    let pool: Vec<usize> = (0..groups.len())
        .filter(|j| params.pool.admits(groups[*j]))
        .collect();
    if pool.is_empty() {
        return Err(Error::Infeasible(format!(
            "pool '{}' has no experts in the team",
            params.pool.name()
        )));
    }
    let n_absent = (params.absence_rate * pool.len() as f64).round() as usize;
    let mut rows = Vec::with_capacity(batch_sizes.len());
    for (b, len) in batch_sizes.iter().enumerate() {
        let budget = params.budget(*len);
        let mut shuffled = pool.clone();
        shuffled.shuffle(&mut seed::rng(params.seeds.absence, "absence", &[b as u64]));
        let mut present: Vec<usize> = shuffled[n_absent.min(pool.len())..].to_vec();
        present.sort_unstable();

        let mut row = vec![0u32; groups.len()];
        if budget == 0 {
            rows.push(row);
            continue;
        }
        if present.is_empty() {
            return Err(Error::Infeasible(format!(
                "all experts absent in batch {b} with deferral budget {budget}"
            )));
        }
        let mut rng = seed::rng(params.seeds.capacity, "capacity", &[b as u64]);
        let shares = match params.distribution {
            Distribution::Homogeneous => homogeneous(present.len(), budget, &mut rng),
            Distribution::Variable => {
                let mu = budget as f64 / present.len() as f64;
                let draws: Vec<f64> = present
                    .iter()
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        (mu + params.distribution.sigma() * mu * z).max(0.0).round()
                    })
                    .collect();
                if draws.iter().sum::<f64>() > 0.0 {
                    largest_remainder(&draws, budget)
                } else {
                    homogeneous(present.len(), budget, &mut rng)
                }
            }
        };
        for (j, s) in present.iter().zip(shares) {
            row[*j] = s;
        }
        rows.push(row);
    }
    Ok(CapacityMatrix {
        n_experts: groups.len(),
        rows,
    })
}

/// Even split; the remainder goes to a seeded random subset.
fn homogeneous<R: Rng>(n: usize, budget: usize, rng: &mut R) -> Vec<u32> {
    let base = (budget / n) as u32;
    let mut out = vec![base; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for j in order.into_iter().take(budget % n) {
        out[j] += 1;
    }
    out
}

/// A fully materialized scenario over a fixed instance set.
#[derive(Clone, Debug, PartialEq)]
pub struct CapacityScenario {
    pub params: ScenarioParams,
    pub batches: BatchPlan,
    pub capacity: CapacityMatrix,
}

impl CapacityScenario {
    pub fn generate(n_instances: usize, groups: &[ExpertGroup], params: &ScenarioParams) -> Result<Self> {
        params.validate()?;
        let batches = build_batches(n_instances, params.batch_size, params.seeds.batch)?;
        let capacity = sample_capacity_matrix(&batches.sizes, groups, params)?;
        Ok(CapacityScenario {
            params: params.clone(),
            batches,
            capacity,
        })
    }
}
