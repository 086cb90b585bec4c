use serde::{Deserialize, Serialize};

use super::{Distribution, Pool, ScenarioParams};
use crate::{Error, Result};

/// Value sets whose cartesian product (times the seed list) forms the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub pools: Vec<Pool>,
    pub batch_sizes: Vec<usize>,
    pub deferral_rates: Vec<f64>,
    pub absence_rates: Vec<f64>,
    pub distributions: Vec<Distribution>,
    pub seeds: Vec<u64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig::baseline_table((0..5).collect())
    }
}

impl GridConfig {
    /// The pool/batch/deferral/absence/distribution layout of the baseline table.
    pub fn baseline_table(seeds: Vec<u64>) -> Self {
        GridConfig {
            pools: vec![Pool::All],
            batch_sizes: vec![250, 5000],
            deferral_rates: vec![0.2, 0.5],
            absence_rates: vec![0.0, 0.5],
            distributions: vec![Distribution::Variable, Distribution::Homogeneous],
            seeds,
        }
    }

    /// Single-archetype pools, no absence, homogeneous capacities.
    pub fn pool_table(seeds: Vec<u64>) -> Self {
        GridConfig {
            pools: vec![Pool::Agreeing, Pool::Sparse, Pool::Standard, Pool::Unfair],
            batch_sizes: vec![250, 5000],
            deferral_rates: vec![0.2, 0.5],
            absence_rates: vec![0.0],
            distributions: vec![Distribution::Homogeneous],
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("pools", self.pools.is_empty()),
            ("batch_sizes", self.batch_sizes.is_empty()),
            ("deferral_rates", self.deferral_rates.is_empty()),
            ("absence_rates", self.absence_rates.is_empty()),
            ("distributions", self.distributions.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("grid.{name} is empty")));
        }
        for combo in self.combos() {
            combo.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Parameter combinations in nested configured order; the seed in each is 0.
    fn combos(&self) -> Vec<ScenarioParams> {
        let mut out = Vec::new();
        for pool in &self.pools {
            for batch in &self.batch_sizes {
                for rate in &self.deferral_rates {
                    for absence in &self.absence_rates {
                        for dist in &self.distributions {
                            out.push(ScenarioParams::new(*pool, *batch, *rate, *dist, *absence, 0));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioGrid {
    pub combos: Vec<ScenarioParams>,
    pub seeds: Vec<u64>,
}

impl ScenarioGrid {
    /// All scenarios, seeds varying fastest.
    pub fn scenarios(&self) -> Vec<ScenarioParams> {
        self.combos
            .iter()
            .flat_map(|c| {
                self.seeds.iter().map(move |s| {
                    ScenarioParams::new(c.pool, c.batch_size, c.deferral_rate, c.distribution, c.absence_rate, *s)
                })
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.combos.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn enumerate_grid(config: &GridConfig) -> Result<ScenarioGrid> {
    config.validate()?;
    Ok(ScenarioGrid {
        combos: config.combos(),
        seeds: config.seeds.clone(),
    })
}
