//! Desk-scale synthetic stand-in for the base dataset.
//!
//! Gaussian numeric features, an integer age column (protected when >= 50), a
//! three-level categorical channel and a logistic ground truth. Months are
//! assigned in equal blocks.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Group, Instance, Schema};
use crate::math::sigmoid;
use crate::seed;

pub const LABEL: &str = "fraud_bool";
pub const MONTH: &str = "month";
pub const AGE: &str = "customer_age";
pub const CHANNEL: &str = "channel";
const CHANNELS: [&str; 3] = ["web", "app", "branch"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub months: u32,
    pub per_month: usize,
    pub numeric_features: usize,
    /// Target fraud prevalence.
    pub prevalence: f64,
    /// Scale of the feature signal in the ground-truth logit.
    pub signal: f64,
    /// Logit shift per standard deviation of age.
    pub age_effect: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            months: 8,
            per_month: 2500,
            numeric_features: 12,
            prevalence: 0.03,
            signal: 2.0,
            age_effect: 0.4,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn schema() -> Schema {
        let mut s = Schema::new(LABEL, MONTH, AGE);
        s.categorical = vec![CHANNEL.to_owned()];
        s
    }
}

pub fn generate(config: &SyntheticConfig) -> Dataset {
    let k = config.numeric_features;
    let mut coef_rng = seed::rng(config.seed, "synthetic/coefficients", &[]);
    let coefs: Vec<f64> = (0..k)
        .map(|_| coef_rng.sample::<f64, _>(StandardNormal))
        .collect();
    let norm = coefs.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
    let channel_effect = [0.0, 0.3, -0.4];

    let n = config.months as usize * config.per_month;
    let mut rng = seed::rng(config.seed, "synthetic/rows", &[]);
    let mut rows = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    for i in 0..n {
        let feats: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let age_draw: f64 = rng.sample(StandardNormal);
        let age = (40.0 + 13.0 * age_draw).round().clamp(18.0, 90.0);
        let channel = rng.random_range(0..CHANNELS.len());
        let s = config.signal * feats.iter().zip(&coefs).map(|(x, c)| x * c).sum::<f64>() / norm
            + config.age_effect * (age - 40.0) / 13.0
            + channel_effect[channel];
        latent.push(s);
        rows.push((i, feats, age, channel));
    }
    let intercept = solve_intercept(&latent, config.prevalence);

    let mut categories = Vec::new();
    let mut code_of = [usize::MAX; 3];
    let instances = rows
        .into_iter()
        .zip(&latent)
        .map(|((i, mut feats, age, channel), s)| {
            let label = (rng.random::<f64>() < sigmoid(intercept + s)) as u8;
            if code_of[channel] == usize::MAX {
                code_of[channel] = categories.len();
                categories.push(CHANNELS[channel].to_owned());
            }
            feats.push(age);
            feats.push(code_of[channel] as f64);
            Instance {
                id: i as u64,
                features: feats,
                label,
                group: if age >= 50.0 {
                    Group::Protected
                } else {
                    Group::Reference
                },
                month: (i / config.per_month) as u32 + 1,
                score: None,
            }
        })
        .collect();

    let mut feature_names: Vec<String> = (0..k).map(|j| format!("x{j:02}")).collect();
    feature_names.push(AGE.to_owned());
    feature_names.push(CHANNEL.to_owned());
    Dataset {
        schema: SyntheticConfig::schema(),
        feature_names,
        categories: [(CHANNEL.to_owned(), categories)].into_iter().collect(),
        instances,
    }
}

fn solve_intercept(latent: &[f64], prevalence: f64) -> f64 {
    let mean_at = |b: f64| latent.iter().map(|s| sigmoid(b + s)).sum::<f64>() / latent.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < prevalence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
