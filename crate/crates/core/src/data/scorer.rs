use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureScaler, Instance};
use crate::math::{logit, sigmoid};
use crate::{seed, Error, Result};

/// Maps a raw feature vector to a fraud probability in [0, 1].
pub trait Scorer {
    fn score(&self, features: &[f64]) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScorerConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            iterations: 300,
            learning_rate: 0.5,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// L2-regularized logistic model over standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticScorer {
    pub scaler: FeatureScaler,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Scorer for LogisticScorer {
    fn score(&self, features: &[f64]) -> f64 {
        let mut z = self.bias;
        for ((x, w), (m, s)) in features
            .iter()
            .zip(&self.weights)
            .zip(self.scaler.mean.iter().zip(&self.scaler.std))
        {
            z += w * (x - m) / s;
        }
        sigmoid(z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedScorer {
    pub model: LogisticScorer,
    pub train_auc: f64,
    /// `None` when the validation set lacks one of the classes.
    pub val_auc: Option<f64>,
}

/// Fits the reference logistic scorer by full-batch gradient descent.
pub fn fit_reference_scorer(
    train: &[Instance],
    val: &[Instance],
    config: &ScorerConfig,
) -> Result<FittedScorer> {
    if train.is_empty() {
        return Err(Error::DegenerateData("empty scorer training set".into()));
    }
    let positives = train.iter().filter(|i| i.label == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::DegenerateData(
            "scorer training data contains a single class".into(),
        ));
    }
    let scaler = FeatureScaler::fit(train)?;
    let d = scaler.dim();
    let n = train.len();
    let xs: Vec<f64> = train
        .iter()
        .flat_map(|i| scaler.transform(&i.features))
        .collect();
    let ys: Vec<f64> = train.iter().map(|i| i.label as f64).collect();

    let mut rng = seed::rng(config.seed, "reference-scorer", &[]);
    let mut weights: Vec<f64> = (0..d)
        .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut bias = logit(positives as f64 / n as f64);
    let mut grad = vec![0.0; d];
    for _ in 0..config.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (row, y) in xs.chunks_exact(d).zip(&ys) {
            let z = bias + row.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>();
            let r = sigmoid(z) - y;
            grad_b += r;
            for (g, x) in grad.iter_mut().zip(row) {
                *g += r * x;
            }
        }
        let inv_n = 1.0 / n as f64;
        bias -= config.learning_rate * grad_b * inv_n;
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= config.learning_rate * (g * inv_n + config.l2 * *w);
        }
    }
    let model = LogisticScorer {
        scaler,
        weights,
        bias,
    };
    let auc_of = |set: &[Instance]| {
        let scores: Vec<f64> = set.iter().map(|i| model.score(&i.features)).collect();
        let labels: Vec<u8> = set.iter().map(|i| i.label).collect();
        crate::eval::roc_auc(&scores, &labels).ok()
    };
    let train_auc = auc_of(train).expect("both classes present in training data");
    let val_auc = auc_of(val);
    Ok(FittedScorer {
        model,
        train_auc,
        val_auc,
    })
}
