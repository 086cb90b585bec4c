use serde::{Deserialize, Serialize};

use super::Instance;
use crate::{Error, Result};

/// Per-column standardization with frozen statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns store 1.
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(instances: &[Instance]) -> Result<Self> {
        let rows: Vec<&[f64]> = instances.iter().map(|i| i.features.as_slice()).collect();
        Self::fit_rows(&rows)
    }

    pub fn fit_rows(rows: &[&[f64]]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::DegenerateData("cannot fit a scaler on zero rows".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    actual: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureScaler { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, v), (m, s)) in out.iter_mut().zip(x).zip(self.mean.iter().zip(&self.std)) {
            *o = (v - m) / s;
        }
    }

    pub fn apply(&self, instances: &[Instance]) -> Vec<Instance> {
        instances
            .iter()
            .map(|i| Instance {
                features: self.transform(&i.features),
                ..i.clone()
            })
            .collect()
    }
}
