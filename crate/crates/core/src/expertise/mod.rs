//! Outcome-probability estimates for deferring a case to a given expert.
//!
//! The deferral loss of routing instance `x` to expert `e` is
//! `lambda * P(FP | x, e) + P(FN | x, e)`.

mod model;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::experts::{error_probabilities, ExpertParams, PredictionLog};
use crate::{Error, Result};

pub use model::{OutcomeModel, OutcomeModelConfig, OUTCOME_MODEL_VERSION};

/// The four decision outcomes, in probability-vector order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Tp = 0,
    Fp = 1,
    Tn = 2,
    Fn = 3,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [Outcome::Tp, Outcome::Fp, Outcome::Tn, Outcome::Fn];

    pub fn from_decision(label: u8, prediction: u8) -> Self {
        match (label, prediction) {
            (1, 1) => Outcome::Tp,
            (0, 1) => Outcome::Fp,
            (0, _) => Outcome::Tn,
            _ => Outcome::Fn,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Probabilities of (TP, FP, TN, FN).
pub type OutcomeProbs = [f64; 4];

pub fn loss_from_probs(p: &OutcomeProbs, lambda: f64) -> f64 {
    lambda * p[Outcome::Fp.index()] + p[Outcome::Fn.index()]
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeExample {
    pub instance_id: u64,
    pub features: Vec<f64>,
    pub score: f64,
    pub expert_id: String,
    pub outcome: Outcome,
}

/// One example per log entry, outcome derived from the label and the logged prediction.
pub fn build_training_set(log: &PredictionLog, instances: &[Instance]) -> Result<Vec<OutcomeExample>> {
    let by_id: HashMap<u64, &Instance> = instances.iter().map(|i| (i.id, i)).collect();
    log.entries
        .iter()
        .map(|e| {
            let inst = by_id.get(&e.instance_id).ok_or_else(|| {
                Error::Integrity(format!("log references unknown instance {}", e.instance_id))
            })?;
            Ok(OutcomeExample {
                instance_id: inst.id,
                features: inst.features.clone(),
                score: inst.score_or_err()?,
                expert_id: e.expert_id.clone(),
                outcome: Outcome::from_decision(inst.label, e.prediction),
            })
        })
        .collect()
}

/// Source of outcome distributions used to build loss matrices. Experts are
/// addressed by their index in the team.
pub trait OutcomeEstimator: Sync {
    fn outcome_probs(&self, instance: &Instance, experts: &[usize]) -> Result<Vec<OutcomeProbs>>;

    fn loss_row(&self, instance: &Instance, experts: &[usize], lambda: f64) -> Result<Vec<f64>> {
        Ok(self
            .outcome_probs(instance, experts)?
            .iter()
            .map(|p| loss_from_probs(p, lambda))
            .collect())
    }
}

/// Plugs in the true flip probabilities of the generating experts.
pub struct OracleEstimator<'a> {
    pub team: &'a [ExpertParams],
    pub threshold: f64,
}

impl OutcomeEstimator for OracleEstimator<'_> {
    fn outcome_probs(&self, instance: &Instance, experts: &[usize]) -> Result<Vec<OutcomeProbs>> {
        let m = instance.score_or_err()?;
        let y = f64::from(instance.label);
        experts
            .iter()
            .map(|j| {
                let e = self
                    .team
                    .get(*j)
                    .ok_or_else(|| Error::UnknownExpert(format!("team index {j}")))?;
                let p = error_probabilities(e, &instance.features, m, self.threshold)?;
                Ok([
                    y * (1.0 - p.p_fn),
                    (1.0 - y) * p.p_fp,
                    (1.0 - y) * (1.0 - p.p_fp),
                    y * p.p_fn,
                ])
            })
            .collect()
    }
}

/// A fitted outcome model bound to the team's expert ordering.
pub struct ModelEstimator<'a> {
    model: &'a OutcomeModel,
    team_ids: Vec<String>,
    to_model: Vec<Option<usize>>,
}

impl<'a> ModelEstimator<'a> {
    pub fn new(model: &'a OutcomeModel, team_ids: &[String]) -> Self {
        let to_model = team_ids.iter().map(|id| model.expert_index(id).ok()).collect();
        ModelEstimator {
            model,
            team_ids: team_ids.to_vec(),
            to_model,
        }
    }
}

impl OutcomeEstimator for ModelEstimator<'_> {
    fn outcome_probs(&self, instance: &Instance, experts: &[usize]) -> Result<Vec<OutcomeProbs>> {
        let idx = experts
            .iter()
            .map(|j| {
                self.to_model.get(*j).copied().flatten().ok_or_else(|| {
                    Error::UnknownExpert(self.team_ids.get(*j).cloned().unwrap_or_else(|| format!("team index {j}")))
                })
            })
            .collect::<Result<Vec<usize>>>()?;
        self.model
            .predict_for_experts(&instance.features, instance.score_or_err()?, &idx)
    }
}

/// `lambda * P(FP) + P(FN)` under a fitted model.
pub fn predicted_loss(model: &OutcomeModel, x: &[f64], score: f64, expert_id: &str, lambda: f64) -> Result<f64> {
    Ok(loss_from_probs(&model.predict_proba(x, score, expert_id)?, lambda))
}
