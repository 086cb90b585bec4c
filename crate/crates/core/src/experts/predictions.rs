use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{decide, error_probability, ExpertParams};
use crate::data::Instance;
use crate::{seed, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub instance_id: u64,
    pub expert_id: String,
    pub prediction: u8,
}

/// Sparse list of expert decisions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PredictionLog {
    pub entries: Vec<PredictionEntry>,
}

impl PredictionLog {
    /// Training-regime logs hold at most one decision per instance.
    pub fn check_single_per_instance(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            if !seen.insert(e.instance_id) {
                return Err(Error::Integrity(format!(
                    "instance {} has more than one logged prediction",
                    e.instance_id
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let entries = r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(PredictionLog { entries })
    }
}

/// Dense instance x expert decision matrix (test regime).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionTable {
    pub expert_ids: Vec<String>,
    pub instance_ids: Vec<u64>,
    row_of: HashMap<u64, usize>,
    /// Row-major, one row per instance.
    values: Vec<u8>,
}

impl PredictionTable {
    pub fn get(&self, instance_id: u64, expert: usize) -> Option<u8> {
        let row = *self.row_of.get(&instance_id)?;
        (expert < self.expert_ids.len()).then(|| self.values[row * self.expert_ids.len() + expert])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn column(&self, expert: usize) -> Vec<u8> {
        let m = self.expert_ids.len();
        (0..self.instance_ids.len()).map(|r| self.values[r * m + expert]).collect()
    }

    pub fn to_log(&self) -> PredictionLog {
        let m = self.expert_ids.len();
        let entries = self
            .instance_ids
            .iter()
            .enumerate()
            .flat_map(|(r, id)| {
                self.expert_ids.iter().enumerate().map(move |(j, e)| PredictionEntry {
                    instance_id: *id,
                    expert_id: e.clone(),
                    prediction: self.values[r * m + j],
                })
            })
            .collect();
        PredictionLog { entries }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_log().write_csv(path)
    }
}

/// Per-expert key for the counter-based decision stream.
pub fn pair_stream_key(seed: u64, expert_id: &str) -> u64 {
    seed::derive(seed, "prediction", &[seed::key_of(expert_id)])
}

/// Uniform draw behind the decision of `expert_id` on `instance_id`.
pub fn pair_uniform(seed: u64, expert_id: &str, instance_id: u64) -> f64 {
    seed::uniform(pair_stream_key(seed, expert_id), instance_id)
}

/// Samples one decision per (instance, expert) pair. The draw for a pair
/// depends only on (seed, expert id, instance id).
pub fn full_prediction_table(
    team: &[ExpertParams],
    instances: &[Instance],
    t: f64,
    seed: u64,
) -> Result<PredictionTable> {
    let keys: Vec<u64> = team.iter().map(|e| pair_stream_key(seed, &e.id)).collect();
    let rows: Vec<Vec<u8>> = instances
        .par_iter()
        .map(|inst| {
            team.iter()
                .zip(&keys)
                .map(|(e, key)| {
                    let p = error_probability(e, inst, t)?;
                    Ok(decide(inst.label, p, seed::uniform(*key, inst.id)))
                })
                .collect::<Result<Vec<u8>>>()
        })
        .collect::<Result<_>>()?;
    let instance_ids: Vec<u64> = instances.iter().map(|i| i.id).collect();
    let row_of = instance_ids.iter().enumerate().map(|(r, id)| (*id, r)).collect();
    Ok(PredictionTable {
        expert_ids: team.iter().map(|e| e.id.clone()).collect(),
        instance_ids,
        row_of,
        values: rows.into_iter().flatten().collect(),
    })
}
