use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Outcome, OutcomeExample, OutcomeProbs};
use crate::data::FeatureScaler;
use crate::math::softmax;
use crate::{Error, Result};

pub const OUTCOME_MODEL_VERSION: u32 = 1;

const CHUNK: usize = 2048;
const K: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutcomeModelConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    /// Feed the model score as an extra input column.
    pub include_score: bool,
    /// Per-expert feature weights on top of the one-hot expert offsets.
    pub interactions: bool,
    /// Weight examples by the inverse frequency of their outcome.
    pub inverse_frequency_weighting: bool,
}

impl Default for OutcomeModelConfig {
    fn default() -> Self {
        OutcomeModelConfig {
            iterations: 300,
            learning_rate: 0.2,
            momentum: 0.9,
            l2: 1e-4,
            include_score: true,
            interactions: true,
            inverse_frequency_weighting: false,
        }
    }
}

/// Multinomial logistic model over standardized inputs plus expert identity.
///
/// Logits are `b_k + W_k x + u_{e,k} + V_{e,k} x`, where `u` is the one-hot
/// expert term and `V` the optional per-expert interaction weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub format_version: u32,
    pub config: OutcomeModelConfig,
    pub seed: u64,
    pub n_examples: usize,
    pub expert_ids: Vec<String>,
    pub scaler: FeatureScaler,
    params: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

struct Layout {
    p: usize,
    q: usize,
}

impl Layout {
    fn shared(&self, k: usize) -> usize {
        k * (self.p + 1)
    }

    fn expert(&self, e: usize, k: usize) -> usize {
        K * (self.p + 1) + (e * K + k) * self.q
    }

    fn len(&self, n_experts: usize) -> usize {
        K * (self.p + 1) + n_experts * K * self.q
    }
}

impl OutcomeModel {
    fn layout(&self) -> Layout {
        layout(self.scaler.dim(), self.config.interactions)
    }

    fn input(&self, x: &[f64], score: f64) -> Result<Vec<f64>> {
        let raw = raw_input(x, score, self.config.include_score);
        if raw.len() != self.scaler.dim() {
            return Err(Error::Dimension {
                expected: self.scaler.dim() - usize::from(self.config.include_score),
                actual: x.len(),
            });
        }
        Ok(self.scaler.transform(&raw))
    }

    pub fn expert_index(&self, expert_id: &str) -> Result<usize> {
        self.index
            .get(expert_id)
            .copied()
            .ok_or_else(|| Error::UnknownExpert(expert_id.to_owned()))
    }

    pub fn predict_proba(&self, x: &[f64], score: f64, expert_id: &str) -> Result<OutcomeProbs> {
        let e = self.expert_index(expert_id)?;
        Ok(self.predict_for_experts(x, score, &[e])?[0])
    }

    /// Distributions for one instance across several experts (model indices).
    pub fn predict_for_experts(&self, x: &[f64], score: f64, experts: &[usize]) -> Result<Vec<OutcomeProbs>> {
        let z = self.input(x, score)?;
        let lay = self.layout();
        let shared = shared_logits(&self.params, &lay, &z);
        experts
            .iter()
            .map(|e| {
                if *e >= self.expert_ids.len() {
                    return Err(Error::UnknownExpert(format!("model index {e}")));
                }
                let mut l = shared;
                add_expert_logits(&self.params, &lay, *e, &z, self.config.interactions, &mut l);
                softmax(&mut l);
                Ok(l)
            })
            .collect()
    }

    /// Mean negative log-likelihood of the examples.
    pub fn log_loss(&self, examples: &[OutcomeExample]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::DegenerateData("no examples to score".into()));
        }
        let mut total = 0.0;
        for ex in examples {
            let p = self.predict_proba(&ex.features, ex.score, &ex.expert_id)?;
            total -= p[ex.outcome.index()].max(1e-300).ln();
        }
        Ok(total / examples.len() as f64)
    }

    pub fn fit(examples: &[OutcomeExample], config: &OutcomeModelConfig, seed: u64) -> Result<Self> {
        let outcomes: BTreeSet<Outcome> = examples.iter().map(|e| e.outcome).collect();
        if outcomes.len() < 2 {
            return Err(Error::DegenerateData(format!(
                "outcome model needs at least 2 distinct outcomes, found {}",
                outcomes.len()
            )));
        }
        if config.iterations == 0 || !(config.learning_rate > 0.0) || !(0.0..1.0).contains(&config.momentum) {
            return Err(Error::Parameter("outcome model needs iterations >= 1, learning_rate > 0, momentum in [0, 1)".into()));
        }
        let expert_ids: Vec<String> = examples
            .iter()
            .map(|e| e.expert_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<String, usize> = expert_ids.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();

        let raw: Vec<Vec<f64>> = examples
            .iter()
            .map(|e| raw_input(&e.features, e.score, config.include_score))
            .collect();
        let rows: Vec<&[f64]> = raw.iter().map(Vec::as_slice).collect();
        let scaler = FeatureScaler::fit_rows(&rows)?;
        let p = scaler.dim();
        let mut xs = Vec::with_capacity(raw.len() * p);
        for r in &raw {
            xs.extend(scaler.transform(r));
        }
        let ex_idx: Vec<usize> = examples.iter().map(|e| index[&e.expert_id]).collect();
        let ys: Vec<usize> = examples.iter().map(|e| e.outcome.index()).collect();

        let mut class_count = [0usize; K];
        for y in &ys {
            class_count[*y] += 1;
        }
        let class_weight: [f64; K] = std::array::from_fn(|k| {
            if config.inverse_frequency_weighting && class_count[k] > 0 {
                examples.len() as f64 / (outcomes.len() * class_count[k]) as f64
            } else {
                1.0
            }
        });
        let weights: Vec<f64> = ys.iter().map(|y| class_weight[*y]).collect();
        let total_w: f64 = weights.iter().sum();

        let lay = layout(p, config.interactions);
        let n_params = lay.len(expert_ids.len());
        let mut params = vec![0.0; n_params];
        let mut class_w = [0.0; K];
        for (y, w) in ys.iter().zip(&weights) {
            class_w[*y] += w;
        }
        for k in 0..K {
            params[lay.shared(k)] = ((class_w[k] + 0.5) / (total_w + 2.0)).ln();
        }

        // Expert-specific gradients scale with the expert's share of the data.
        let mut expert_w = vec![0.0; expert_ids.len()];
        for (e, w) in ex_idx.iter().zip(&weights) {
            expert_w[*e] += w;
        }
        let mut precond = vec![1.0; n_params];
        let mut reg = vec![config.l2; n_params];
        for k in 0..K {
            reg[lay.shared(k)] = 0.0;
        }
        for (e, w) in expert_w.iter().enumerate() {
            let scale = total_w / w;
            for k in 0..K {
                let o = lay.expert(e, k);
                precond[o..o + lay.q].iter_mut().for_each(|v| *v = scale);
            }
        }

        let n = ys.len();
        let mut velocity = vec![0.0; n_params];
        for _ in 0..config.iterations {
            let partials: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let mut g = vec![0.0; n_params];
                    for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                        let z = &xs[i * p..(i + 1) * p];
                        let mut l = shared_logits(&params, &lay, z);
                        add_expert_logits(&params, &lay, ex_idx[i], z, config.interactions, &mut l);
                        softmax(&mut l);
                        l[ys[i]] -= 1.0;
                        let scale = weights[i] / total_w;
                        for (k, r) in l.iter().enumerate() {
                            let r = r * scale;
                            let s = lay.shared(k);
                            g[s] += r;
                            for (gj, zj) in g[s + 1..s + 1 + p].iter_mut().zip(z) {
                                *gj += r * zj;
                            }
                            let o = lay.expert(ex_idx[i], k);
                            g[o] += r;
                            if config.interactions {
                                for (gj, zj) in g[o + 1..o + 1 + p].iter_mut().zip(z) {
                                    *gj += r * zj;
                                }
                            }
                        }
                    }
                    g
                })
                .collect();
            let mut grad = vec![0.0; n_params];
            for part in &partials {
                for (g, v) in grad.iter_mut().zip(part) {
                    *g += v;
                }
            }
            for j in 0..n_params {
                let g = (grad[j] + reg[j] * params[j]) * precond[j];
                velocity[j] = config.momentum * velocity[j] - config.learning_rate * g;
                params[j] += velocity[j];
            }
        }

        Ok(OutcomeModel {
            format_version: OUTCOME_MODEL_VERSION,
            config: config.clone(),
            seed,
            n_examples: n,
            expert_ids,
            scaler,
            params,
            index,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut model: OutcomeModel = serde_json::from_str(text)?;
        if model.format_version != OUTCOME_MODEL_VERSION {
            return Err(Error::Parameter(format!(
                "outcome model format {} unsupported (expected {OUTCOME_MODEL_VERSION})",
                model.format_version
            )));
        }
        let expected = layout(model.scaler.dim(), model.config.interactions).len(model.expert_ids.len());
        if model.params.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: model.params.len(),
            });
        }
        model.index = model.expert_ids.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn layout(p: usize, interactions: bool) -> Layout {
    Layout {
        p,
        q: 1 + if interactions { p } else { 0 },
    }
}

fn raw_input(x: &[f64], score: f64, include_score: bool) -> Vec<f64> {
    let mut v = x.to_vec();
    if include_score {
        v.push(score);
    }
    v
}

fn shared_logits(params: &[f64], lay: &Layout, z: &[f64]) -> [f64; K] {
    std::array::from_fn(|k| {
        let s = lay.shared(k);
        params[s] + params[s + 1..s + 1 + lay.p].iter().zip(z).map(|(w, x)| w * x).sum::<f64>()
    })
}

fn add_expert_logits(params: &[f64], lay: &Layout, e: usize, z: &[f64], interactions: bool, out: &mut [f64; K]) {
    for (k, l) in out.iter_mut().enumerate() {
        let o = lay.expert(e, k);
        *l += params[o];
        if interactions {
            *l += params[o + 1..o + 1 + lay.p].iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}
