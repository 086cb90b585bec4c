use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{calibrate_intercepts, ExpertGroup, ExpertParams};
use crate::data::Instance;
use crate::{seed, Error, Result};

/// Fraction of nonzero feature weights, either directly or as an expected count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sparsity {
    Fraction(f64),
    ExpectedNonzero(f64),
}

impl Sparsity {
    pub fn fraction(self, d: usize) -> f64 {
        match self {
            Sparsity::Fraction(f) => f,
            Sparsity::ExpectedNonzero(k) => (k / d as f64).min(1.0),
        }
    }

    fn validate(self, group: &str) -> Result<()> {
        let ok = match self {
            Sparsity::Fraction(f) => f > 0.0 && f <= 1.0,
            Sparsity::ExpectedNonzero(k) => k > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("{group}: sparsity {self:?} out of range")))
        }
    }
}

/// Sampling recipe for one archetype.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub count: usize,
    pub fpr_range: (f64, f64),
    pub fnr_range: (f64, f64),
    pub alpha_range: (f64, f64),
    pub sparsity: Sparsity,
    /// Score weight as a signed multiple of the feature-weight norm:
    /// `w_M = r * |w|`. Negative values make a high score push toward "fraud".
    pub score_weight_ratio: (f64, f64),
    /// Added to the protected feature's weight in the false-positive direction.
    #[serde(default)]
    pub protected_boost: f64,
    /// Hard cap on nonzero weights as a fraction of the dimension (rounded up).
    #[serde(default)]
    pub max_nonzero_fraction: Option<f64>,
}

impl GroupConfig {
    fn base(count: usize) -> Self {
        GroupConfig {
            count,
            fpr_range: (0.02, 0.08),
            fnr_range: (0.30, 0.60),
            alpha_range: (0.5, 1.5),
            sparsity: Sparsity::ExpectedNonzero(12.0),
            score_weight_ratio: (-0.6, -0.2),
            protected_boost: 0.0,
            max_nonzero_fraction: None,
        }
    }

    pub fn standard() -> Self {
        Self::base(20)
    }

    pub fn unfair() -> Self {
        GroupConfig {
            protected_boost: 2.0,
            ..Self::base(10)
        }
    }

    pub fn agreeing() -> Self {
        GroupConfig {
            score_weight_ratio: (-3.0, -1.0),
            ..Self::base(10)
        }
    }

    pub fn sparse() -> Self {
        GroupConfig {
            sparsity: Sparsity::ExpectedNonzero(2.0),
            max_nonzero_fraction: Some(0.25),
            ..Self::base(10)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamConfig {
    #[serde(default = "GroupConfig::standard")]
    pub standard: GroupConfig,
    #[serde(default = "GroupConfig::unfair")]
    pub unfair: GroupConfig,
    #[serde(default = "GroupConfig::agreeing")]
    pub agreeing: GroupConfig,
    #[serde(default = "GroupConfig::sparse")]
    pub sparse: GroupConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub calibration_tol: f64,
}

fn default_tol() -> f64 {
    1e-4
}

impl Default for TeamConfig {
    fn default() -> Self {
        TeamConfig {
            standard: GroupConfig::standard(),
            unfair: GroupConfig::unfair(),
            agreeing: GroupConfig::agreeing(),
            sparse: GroupConfig::sparse(),
            seed: 0,
            calibration_tol: default_tol(),
        }
    }
}

impl TeamConfig {
    pub fn groups(&self) -> [(ExpertGroup, &GroupConfig); 4] {
        [
            (ExpertGroup::Standard, &self.standard),
            (ExpertGroup::Unfair, &self.unfair),
            (ExpertGroup::Agreeing, &self.agreeing),
            (ExpertGroup::Sparse, &self.sparse),
        ]
    }

    pub fn size(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, (lo, hi): (f64, f64)| {
            if lo > 0.0 && hi < 1.0 && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} range ({lo}, {hi}) must lie inside (0, 1)")))
            }
        };
        for (group, g) in self.groups() {
            let n = group.name();
            unit(&format!("{n}.fpr_range"), g.fpr_range)?;
            unit(&format!("{n}.fnr_range"), g.fnr_range)?;
            let (alo, ahi) = g.alpha_range;
            if !(alo >= 0.0 && alo <= ahi) {
                return Err(Error::Config(format!("{n}.alpha_range must be 0 <= lo <= hi")));
            }
            g.sparsity.validate(n)?;
            let (rlo, rhi) = g.score_weight_ratio;
            if rlo > rhi {
                return Err(Error::Config(format!("{n}.score_weight_ratio must be lo <= hi")));
            }
            if let Some(f) = g.max_nonzero_fraction {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Config(format!("{n}.max_nonzero_fraction must be in (0, 1]")));
                }
            }
        }
        // model-agreeing experts need |w_M| >= |w| for the score term to dominate
        let (rlo, rhi) = self.agreeing.score_weight_ratio;
        if self.agreeing.count > 0 && (rlo.abs().min(rhi.abs()) < 1.0 || (rlo < 0.0 && rhi > 0.0)) {
            return Err(Error::Config(
                "agreeing.score_weight_ratio must stay at magnitude >= 1 on one side of zero".into(),
            ));
        }
        if !(self.calibration_tol > 0.0) {
            return Err(Error::Config("calibration_tol must be positive".into()));
        }
        Ok(())
    }
}

fn uniform_in<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draws uncalibrated parameters for expert `k` of `group` from its own stream.
fn sample_expert(
    group: ExpertGroup,
    g: &GroupConfig,
    k: usize,
    d: usize,
    protected_index: usize,
    team_seed: u64,
) -> (ExpertParams, f64, f64) {
    let mut rng = seed::rng(team_seed, "expert", &[group as u64, k as u64]);
    let target_fpr = uniform_in(&mut rng, g.fpr_range);
    let target_fnr = uniform_in(&mut rng, g.fnr_range);
    let alpha = uniform_in(&mut rng, g.alpha_range);
    let keep = g.sparsity.fraction(d);
    let mut w: Vec<f64> = (0..d)
        .map(|_| {
            let v: f64 = rng.sample(StandardNormal);
            if rng.random::<f64>() < keep {
                v
            } else {
                0.0
            }
        })
        .collect();
    let mut nonzero: Vec<usize> = (0..d).filter(|j| w[*j] != 0.0).collect();
    if nonzero.is_empty() {
        let j = rng.random_range(0..d);
        w[j] = rng.sample(StandardNormal);
        nonzero.push(j);
    }
    if let Some(frac) = g.max_nonzero_fraction {
        let cap = ((frac * d as f64).ceil() as usize).max(1);
        if nonzero.len() > cap {
            nonzero.shuffle(&mut rng);
            for j in &nonzero[cap..] {
                w[*j] = 0.0;
            }
        }
    }
    if g.protected_boost != 0.0 {
        // lowering z raises P(FP); push the protected weight negative
        w[protected_index] = -(w[protected_index].abs() + g.protected_boost);
    }
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let w_m = uniform_in(&mut rng, g.score_weight_ratio) * norm;
    let params = ExpertParams {
        id: format!("{}-{k:02}", group.name()),
        group,
        beta0: 0.0,
        beta1: 0.0,
        alpha,
        w,
        w_m,
        targets: None,
    };
    (params, target_fpr, target_fnr)
}

/// Samples each archetype's experts and calibrates their intercepts on
/// `calibration_sample` (standardized features, scores attached).
///
/// Team order is standard, unfair, agreeing, sparse. Every expert draws from a
/// stream keyed by (team seed, group, index).
pub fn generate_team(
    config: &TeamConfig,
    d: usize,
    protected_index: usize,
    calibration_sample: &[Instance],
    t: f64,
) -> Result<Vec<ExpertParams>> {
    config.validate()?;
    if protected_index >= d {
        return Err(Error::Parameter(format!(
            "protected index {protected_index} out of range for dimension {d}"
        )));
    }
    let drafts: Vec<_> = config
        .groups()
        .iter()
        .flat_map(|(group, g)| {
            (0..g.count).map(move |k| sample_expert(*group, g, k, d, protected_index, config.seed))
        })
        .collect();
    drafts
        .par_iter()
        .map(|(params, fpr, fnr)| {
            calibrate_intercepts(params, calibration_sample, t, *fpr, *fnr, config.calibration_tol)
        })
        .collect()
}
