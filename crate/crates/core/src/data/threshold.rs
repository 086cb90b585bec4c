use crate::{Error, Result};

/// Fraction of negatives with `score >= threshold`.
pub fn empirical_fpr(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let (mut neg, mut flagged) = (0usize, 0usize);
    for (s, y) in scores.iter().zip(labels) {
        if *y == 0 {
            neg += 1;
            if *s >= threshold {
                flagged += 1;
            }
        }
    }
    if neg == 0 {
        return Err(Error::UndefinedFpr("no negative labels".into()));
    }
    Ok(flagged as f64 / neg as f64)
}

/// Smallest candidate threshold whose empirical FPR (`score >= t` flagged) is
/// at most `target_fpr`.
///
/// Candidates are the observed scores plus the float just above the maximum,
/// so among thresholds with equal FPR the one flagging the most positives wins.
pub fn select_threshold(scores: &[f64], labels: &[u8], target_fpr: f64) -> Result<f64> {
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::Parameter(format!("target_fpr {target_fpr} outside (0, 1)")));
    }
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Parameter(format!("score {bad} is not a number")));
    }
    let mut negatives: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, y)| **y == 0)
        .map(|(s, _)| *s)
        .collect();
    if negatives.is_empty() {
        return Err(Error::UndefinedFpr("no negative labels".into()));
    }
    negatives.sort_by(f64::total_cmp);
    let n_neg = negatives.len() as f64;

    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let top = *candidates.last().expect("at least one negative");
    candidates.push(top.next_up());

    // FPR is nonincreasing in the threshold: binary-search the first qualifying candidate.
    let qualifies = |t: f64| {
        let below = negatives.partition_point(|s| *s < t);
        (negatives.len() - below) as f64 / n_neg <= target_fpr
    };
    let first = candidates.partition_point(|t| !qualifies(*t));
    Ok(candidates[first])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive oracle: scan every candidate in ascending order.
    fn brute_force(scores: &[f64], labels: &[u8], target: f64) -> f64 {
        let mut cands: Vec<f64> = scores.to_vec();
        let top = cands.iter().cloned().fold(f64::MIN, f64::max);
        cands.push(top.next_up());
        cands.sort_by(f64::total_cmp);
        for c in cands {
            if empirical_fpr(scores, labels, c).unwrap() <= target {
                return c;
            }
        }
        unreachable!("threshold above all scores has FPR 0")
    }

    #[test]
    fn four_negatives_quarter_fpr_flags_exactly_one() {
        let scores = [0.1, 0.2, 0.3, 0.9];
        let labels = [0, 0, 0, 0];
        let t = select_threshold(&scores, &labels, 0.25).unwrap();
        assert_eq!(t, 0.9);
        assert_eq!(brute_force(&scores, &labels, 0.25), 0.9);
        assert_eq!(empirical_fpr(&scores, &labels, t).unwrap(), 0.25);
    }

    #[test]
    fn positives_between_negatives_pull_threshold_down() {
        // a positive at 0.5 flags no extra negative, so it is the smallest qualifier
        let scores = [0.1, 0.2, 0.3, 0.9, 0.5];
        let labels = [0, 0, 0, 0, 1];
        assert_eq!(select_threshold(&scores, &labels, 0.25).unwrap(), 0.5);
    }

    #[test]
    fn near_one_target_flags_all_but_what_the_budget_forbids() {
        let scores = [0.1, 0.2, 0.3, 0.9, 0.05];
        let labels = [0, 0, 0, 0, 1];
        let t = select_threshold(&scores, &labels, 0.999).unwrap();
        // three of four negatives is the most a sub-unit FPR allows
        assert_eq!(t, 0.2);
        assert!(t <= 0.2);
    }

    #[test]
    fn all_zero_negatives_give_positive_threshold() {
        let scores = [0.0; 5];
        let labels = [0; 5];
        let t = select_threshold(&scores, &labels, 0.05).unwrap();
        assert!(t > 0.0);
        assert_eq!(empirical_fpr(&scores, &labels, t).unwrap(), 0.0);
    }

    #[test]
    fn no_negatives_is_an_error() {
        assert!(matches!(
            select_threshold(&[0.2, 0.4], &[1, 1], 0.05),
            Err(Error::UndefinedFpr(_))
        ));
    }

    #[test]
    fn target_outside_unit_interval_is_rejected() {
        assert!(select_threshold(&[0.2], &[0], 0.0).is_err());
        assert!(select_threshold(&[0.2], &[0], 1.0).is_err());
    }

    fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        prop::collection::vec((0u32..50, prop::bool::weighted(0.3)), 1..60).prop_map(|rows| {
            let mut scores: Vec<f64> = rows.iter().map(|(s, _)| *s as f64 / 50.0).collect();
            let mut labels: Vec<u8> = rows.iter().map(|(_, y)| *y as u8).collect();
            scores.push(0.5);
            labels.push(0);
            (scores, labels)
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_respects_target((scores, labels) in sample(), target in 0.001f64..0.999) {
            let t = select_threshold(&scores, &labels, target).unwrap();
            prop_assert_eq!(t, brute_force(&scores, &labels, target));
            prop_assert!(empirical_fpr(&scores, &labels, t).unwrap() <= target);
        }

        #[test]
        fn lower_target_never_lowers_threshold((scores, labels) in sample(), a in 0.001f64..0.999, b in 0.001f64..0.999) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let t_lo = select_threshold(&scores, &labels, lo).unwrap();
            let t_hi = select_threshold(&scores, &labels, hi).unwrap();
            prop_assert!(t_lo >= t_hi);
        }
    }
}
