//! Synthetic decision-makers driven by instance-dependent label noise.
//!
//! Each expert flips the true label with a probability that depends on the
//! standardized features `x` and on a transformed model score `M(m)`:
//!
//! ```text
//! z    = (w . x + w_M * M(m)) / sqrt(w . w + w_M^2)
//! P(FP) = sigmoid(beta0 - alpha * z)      (label 0 predicted 1)
//! P(FN) = sigmoid(beta1 + alpha * z)      (label 1 predicted 0)
//! ```

mod predictions;
mod team;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::math::{logit, sigmoid};
use crate::{Error, Result};

pub use predictions::{
    full_prediction_table, pair_stream_key, pair_uniform, PredictionEntry, PredictionLog,
    PredictionTable,
};
pub use team::{generate_team, GroupConfig, Sparsity, TeamConfig};

/// Intercepts are searched inside this interval.
pub const INTERCEPT_BRACKET: (f64, f64) = (-30.0, 30.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertGroup {
    Standard,
    Unfair,
    Agreeing,
    Sparse,
}

impl ExpertGroup {
    pub const ALL: [ExpertGroup; 4] = [
        ExpertGroup::Standard,
        ExpertGroup::Unfair,
        ExpertGroup::Agreeing,
        ExpertGroup::Sparse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExpertGroup::Standard => "standard",
            ExpertGroup::Unfair => "unfair",
            ExpertGroup::Agreeing => "agreeing",
            ExpertGroup::Sparse => "sparse",
        }
    }
}

impl std::fmt::Display for ExpertGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTargets {
    pub fpr: f64,
    pub fnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertParams {
    pub id: String,
    pub group: ExpertGroup,
    pub beta0: f64,
    pub beta1: f64,
    pub alpha: f64,
    pub w: Vec<f64>,
    pub w_m: f64,
    /// Error rates the intercepts were calibrated to, when generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<ErrorTargets>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorProbs {
    pub p_fp: f64,
    pub p_fn: f64,
}

/// Piecewise-linear score transform onto [-0.5, 0.5] with `M(t) = 0`.
pub fn transform_score(m: f64, t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Parameter(format!("threshold {t} outside (0, 1)")));
    }
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::Parameter(format!("model score {m} outside [0, 1]")));
    }
    Ok(if m <= t {
        (m - t) / (2.0 * t)
    } else {
        (m - t) / (2.0 * (1.0 - t))
    })
}

impl ExpertParams {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Normalized feature/score projection; 0 when `alpha` or every weight is 0.
    pub fn projection(&self, x: &[f64], m: f64, t: f64) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(Error::Dimension {
                expected: self.w.len(),
                actual: x.len(),
            });
        }
        let big_m = transform_score(m, t)?;
        let norm_sq = self.w.iter().map(|v| v * v).sum::<f64>() + self.w_m * self.w_m;
        if self.alpha == 0.0 || norm_sq == 0.0 {
            return Ok(0.0);
        }
        let num = self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.w_m * big_m;
        Ok(num / norm_sq.sqrt())
    }

    pub fn probs_from_projection(&self, z: f64) -> ErrorProbs {
        ErrorProbs {
            p_fp: sigmoid(self.beta0 - self.alpha * z),
            p_fn: sigmoid(self.beta1 + self.alpha * z),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Parameter(format!("expert {}: alpha {} < 0", self.id, self.alpha)));
        }
        if self.alpha > 0.0 && self.w.iter().all(|v| *v == 0.0) && self.w_m == 0.0 {
            return Err(Error::Parameter(format!(
                "expert {}: alpha > 0 but all weights are zero",
                self.id
            )));
        }
        Ok(())
    }
}

pub fn error_probabilities(e: &ExpertParams, x: &[f64], m: f64, t: f64) -> Result<ErrorProbs> {
    Ok(e.probs_from_projection(e.projection(x, m, t)?))
}

/// Probability that the expert errs on this particular instance.
pub fn error_probability(e: &ExpertParams, instance: &Instance, t: f64) -> Result<f64> {
    let p = error_probabilities(e, &instance.features, instance.score_or_err()?, t)?;
    Ok(if instance.label == 0 { p.p_fp } else { p.p_fn })
}

/// Decision given an error probability for the true label and a uniform draw.
#[inline]
pub fn decide(label: u8, p_error: f64, u: f64) -> u8 {
    let flip = u < p_error;
    if flip {
        1 - label
    } else {
        label
    }
}

pub fn sample_prediction<R: Rng + ?Sized>(
    e: &ExpertParams,
    instance: &Instance,
    t: f64,
    rng: &mut R,
) -> Result<u8> {
    let p = error_probability(e, instance, t)?;
    Ok(decide(instance.label, p, rng.random::<f64>()))
}

fn bisect_increasing(mut f: impl FnMut(f64) -> f64, target: f64) -> Option<f64> {
    let (mut lo, mut hi) = INTERCEPT_BRACKET;
    if f(lo) > target || f(hi) < target {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Mean closed-form FPR over negatives and FNR over positives of `sample`.
pub fn mean_error_rates(e: &ExpertParams, sample: &[Instance], t: f64) -> Result<(f64, f64)> {
    let (mut fp, mut n0, mut fnr, mut n1) = (0.0, 0usize, 0.0, 0usize);
    for inst in sample {
        let p = error_probabilities(e, &inst.features, inst.score_or_err()?, t)?;
        if inst.label == 0 {
            fp += p.p_fp;
            n0 += 1;
        } else {
            fnr += p.p_fn;
            n1 += 1;
        }
    }
    Ok((fp / n0 as f64, fnr / n1 as f64))
}

/// Sets `beta0` and `beta1` so the mean error probabilities on `sample`
/// hit the targets. Each intercept is bisected independently.
pub fn calibrate_intercepts(
    e: &ExpertParams,
    sample: &[Instance],
    t: f64,
    target_fpr: f64,
    target_fnr: f64,
    tol: f64,
) -> Result<ExpertParams> {
    let fail = |reason: String| Error::Calibration {
        expert: e.id.clone(),
        reason,
    };
    for (name, v) in [("target_fpr", target_fpr), ("target_fnr", target_fnr)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(fail(format!("{name} {v} outside (0, 1)")));
        }
    }
    let mut z_neg = Vec::new();
    let mut z_pos = Vec::new();
    for inst in sample {
        let z = e.projection(&inst.features, inst.score_or_err()?, t)?;
        if inst.label == 0 {
            z_neg.push(e.alpha * z);
        } else {
            z_pos.push(e.alpha * z);
        }
    }
    if z_neg.is_empty() || z_pos.is_empty() {
        return Err(fail("calibration sample must contain both classes".into()));
    }

    // sign = -1 for the false-positive intercept, +1 for the false-negative one
    let solve = |zs: &[f64], sign: f64, target: f64, name: &str| -> Result<f64> {
        let mean = |b: f64| zs.iter().map(|az| sigmoid(b + sign * az)).sum::<f64>() / zs.len() as f64;
        let b = if zs.iter().all(|z| *z == zs[0]) {
            logit(target) - sign * zs[0]
        } else {
            bisect_increasing(mean, target).ok_or_else(|| {
                fail(format!("{name} does not bracket target {target} in [-30, 30]"))
            })?
        };
        let reached = mean(b);
        if (reached - target).abs() > tol {
            return Err(fail(format!("{name} converged to rate {reached} (target {target})")));
        }
        Ok(b)
    };
    let beta0 = solve(&z_neg, -1.0, target_fpr, "beta0")?;
    let beta1 = solve(&z_pos, 1.0, target_fnr, "beta1")?;
    Ok(ExpertParams {
        beta0,
        beta1,
        targets: Some(ErrorTargets {
            fpr: target_fpr,
            fnr: target_fnr,
        }),
        ..e.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Group;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn expert(beta0: f64, beta1: f64, alpha: f64, w: Vec<f64>, w_m: f64) -> ExpertParams {
        ExpertParams {
            id: "e".into(),
            group: ExpertGroup::Standard,
            beta0,
            beta1,
            alpha,
            w,
            w_m,
            targets: None,
        }
    }

    fn inst(features: Vec<f64>, label: u8, score: f64) -> Instance {
        Instance {
            id: 0,
            features,
            label,
            group: Group::Reference,
            month: 1,
            score: Some(score),
        }
    }

    #[test]
    fn transform_fixed_points() {
        for t in [0.01, 0.051, 0.5, 0.9] {
            assert_eq!(transform_score(t, t).unwrap(), 0.0);
            assert_eq!(transform_score(0.0, t).unwrap(), -0.5);
            assert_eq!(transform_score(1.0, t).unwrap(), 0.5);
        }
        assert!(transform_score(0.5, 0.0).is_err());
        assert!(transform_score(0.5, 1.0).is_err());
    }

    #[test]
    fn zero_alpha_gives_half_half() {
        let e = expert(0.0, 0.0, 0.0, vec![1.0, 2.0], 0.5);
        let p = error_probabilities(&e, &[3.0, -1.0], 0.7, 0.3).unwrap();
        assert_eq!((p.p_fp, p.p_fn), (0.5, 0.5));
    }

    #[test]
    fn saturated_intercept_never_flips() {
        let e = expert(-20.0, 0.0, 1.0, vec![1.0, 0.0], 0.0);
        let p = error_probabilities(&e, &[1.0, 0.0], 0.2, 0.3).unwrap();
        assert!(p.p_fp < 1e-8);
    }

    #[test]
    fn unit_projection_matches_sigmoid_table() {
        let e = expert(0.0, 0.0, 1.0, vec![1.0, 0.0], 0.0);
        for m in [0.0, 0.3, 1.0] {
            assert_eq!(e.projection(&[1.0, 0.0], m, 0.4).unwrap(), 1.0);
            let p = error_probabilities(&e, &[1.0, 0.0], m, 0.4).unwrap();
            assert!((p.p_fp - 0.268_941_421_369_995_1).abs() < 1e-12);
            assert!((p.p_fn - 0.731_058_578_630_004_9).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let e = expert(0.0, 0.0, 1.0, vec![1.0, 0.0], 0.0);
        assert!(matches!(
            error_probabilities(&e, &[1.0], 0.5, 0.5),
            Err(Error::Dimension { expected: 2, actual: 1 })
        ));
    }

    #[test]
    fn forced_probabilities_are_deterministic_decisions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let never_fp = expert(-20.0, 0.0, 0.0, vec![0.0], 0.0);
        let always_fn = expert(0.0, 20.0, 0.0, vec![0.0], 0.0);
        for _ in 0..1000 {
            assert_eq!(sample_prediction(&never_fp, &inst(vec![0.0], 0, 0.5), 0.5, &mut rng).unwrap(), 0);
            assert_eq!(sample_prediction(&always_fn, &inst(vec![0.0], 1, 0.5), 0.5, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn monte_carlo_flip_rate() {
        // p_fp = 0.3 exactly via closed-form intercept
        let e = expert(logit(0.3), 0.0, 0.0, vec![0.0], 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let x = inst(vec![0.0], 0, 0.5);
        let n = 100_000;
        let flips = (0..n)
            .filter(|_| sample_prediction(&e, &x, 0.5, &mut rng).unwrap() == 1)
            .count();
        let rate = flips as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.01, "rate {rate}");
    }

    fn sample_instances(n: usize, seed: u64) -> Vec<Instance> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                inst(x, (i % 5 == 0) as u8, rng.random())
            })
            .collect()
    }

    #[test]
    fn calibration_closed_forms() {
        let sample = sample_instances(500, 2);
        let e = expert(0.0, 0.0, 0.0, vec![1.0, 0.0, 0.0], 0.0);
        let c = calibrate_intercepts(&e, &sample, 0.3, 0.05, 0.5, 1e-6).unwrap();
        assert!((c.beta0 - (-2.944_438_979_166_44)).abs() < 1e-9, "{}", c.beta0);
        assert!(c.beta1.abs() < 1e-12);
    }

    #[test]
    fn calibration_hits_targets_and_is_idempotent() {
        let sample = sample_instances(2000, 3);
        let e = expert(0.0, 0.0, 1.7, vec![1.0, -0.5, 0.2], -0.8);
        let c = calibrate_intercepts(&e, &sample, 0.3, 0.04, 0.45, 1e-3).unwrap();
        let (fpr, fnr) = mean_error_rates(&c, &sample, 0.3).unwrap();
        assert!((fpr - 0.04).abs() <= 1e-3);
        assert!((fnr - 0.45).abs() <= 1e-3);
        let again = calibrate_intercepts(&c, &sample, 0.3, 0.04, 0.45, 1e-3).unwrap();
        assert!((again.beta0 - c.beta0).abs() < 1e-9);
        assert!((again.beta1 - c.beta1).abs() < 1e-9);
    }

    #[test]
    fn unreachable_target_fails_to_bracket() {
        // alpha * z spans +-60 on this sample: sigmoid(-30 - 60) ~ 0 on half the rows,
        // sigmoid(30 + 60) ~ 1, so a mean of 1e-14 cannot be bracketed
        let sample: Vec<Instance> = (0..10)
            .map(|i| inst(vec![if i % 2 == 0 { 1.0 } else { -1.0 }], (i >= 8) as u8, 0.5))
            .collect();
        let e = expert(0.0, 0.0, 60.0, vec![1.0], 0.0);
        let err = calibrate_intercepts(&e, &sample, 0.5, 1e-14, 0.5, 1e-16).unwrap_err();
        assert!(matches!(err, Error::Calibration { ref expert, .. } if expert == "e"));
    }

    proptest! {
        #[test]
        fn transform_is_monotone_bounded_and_continuous(a in 0.0f64..=1.0, b in 0.0f64..=1.0, t in 0.001f64..0.999) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (ml, mh) = (transform_score(lo, t).unwrap(), transform_score(hi, t).unwrap());
            prop_assert!(ml <= mh);
            prop_assert!((-0.5..=0.5).contains(&ml) && (-0.5..=0.5).contains(&mh));
            let eps = 1e-9;
            let left = transform_score((t - eps).max(0.0), t).unwrap();
            let right = transform_score((t + eps).min(1.0), t).unwrap();
            prop_assert!(left.abs() < 1e-6 && right.abs() < 1e-6);
        }

        #[test]
        fn probabilities_move_monotonically_along_w(
            w in prop::collection::vec(-2.0f64..2.0, 3),
            x in prop::collection::vec(-2.0f64..2.0, 3),
            alpha in 0.1f64..3.0, step in 0.01f64..1.0, m in 0.0f64..1.0,
        ) {
            prop_assume!(w.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let e = expert(-1.0, 0.5, alpha, w.clone(), 0.3);
            let x2: Vec<f64> = x.iter().zip(&w).map(|(xi, wi)| xi + step * wi).collect();
            let p1 = error_probabilities(&e, &x, m, 0.3).unwrap();
            let p2 = error_probabilities(&e, &x2, m, 0.3).unwrap();
            prop_assert!(p2.p_fp < p1.p_fp);
            prop_assert!(p2.p_fn > p1.p_fn);
        }

        #[test]
        fn decisions_follow_complements(label in 0u8..2, p in 0.0f64..1.0, u in 0.0f64..1.0) {
            let d = decide(label, p, u);
            prop_assert_eq!(d != label, u < p);
        }
    }
}
