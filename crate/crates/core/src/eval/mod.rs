//! Cost-sensitive loss, confusion statistics, predictive equality and report tables.
//!
//! The loss of a set of decisions is `lambda * N(FP) + N(FN)` with
//! `lambda = t / (1 - t)` tied to the operating threshold `t`.

mod elkan;
mod report;

use std::collections::BTreeMap;
use std::fmt::Display;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use elkan::{calibrated_grid, elkan_threshold_consistency_check, ElkanReport};
pub use report::{summarize, write_results_csv, ResultRecord, SummaryRow, SummaryTable};

pub fn lambda_from_threshold(t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Parameter(format!("threshold {t} outside (0, 1)")));
    }
    Ok(t / (1.0 - t))
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, decision: u8, label: u8) {
        match (label, decision) {
            (1, 1) => self.tp += 1,
            (0, 1) => self.fp += 1,
            (0, _) => self.tn += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn from_decisions(decisions: &[u8], labels: &[u8]) -> Result<Self> {
        check_lengths(decisions.len(), labels.len())?;
        let mut c = Confusion::default();
        for (d, y) in decisions.iter().zip(labels) {
            c.record(*d, *y);
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn loss(&self, lambda: f64) -> f64 {
        lambda * self.fp as f64 + self.fn_ as f64
    }

    /// `None` when there are no negatives.
    pub fn fpr(&self) -> Option<f64> {
        let neg = self.fp + self.tn;
        (neg > 0).then(|| self.fp as f64 / neg as f64)
    }

    /// `None` when there are no positives.
    pub fn tpr(&self) -> Option<f64> {
        let pos = self.tp + self.fn_;
        (pos > 0).then(|| self.tp as f64 / pos as f64)
    }
}

impl Add for Confusion {
    type Output = Confusion;
    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl AddAssign for Confusion {
    fn add_assign(&mut self, o: Confusion) {
        *self = *self + o;
    }
}

pub fn cost_sensitive_loss(decisions: &[u8], labels: &[u8], lambda: f64) -> Result<f64> {
    Ok(Confusion::from_decisions(decisions, labels)?.loss(lambda))
}

/// Confusion counts per group key.
pub fn group_confusions<G: Ord + Clone>(
    decisions: &[u8],
    labels: &[u8],
    groups: &[G],
) -> Result<BTreeMap<G, Confusion>> {
    check_lengths(decisions.len(), labels.len())?;
    check_lengths(decisions.len(), groups.len())?;
    let mut out: BTreeMap<G, Confusion> = BTreeMap::new();
    for ((d, y), g) in decisions.iter().zip(labels).zip(groups) {
        out.entry(g.clone()).or_default().record(*d, *y);
    }
    Ok(out)
}

/// Group FPRs; a group without negatives is an error naming it.
pub fn group_fprs<G: Ord + Clone + Display>(confusions: &BTreeMap<G, Confusion>) -> Result<BTreeMap<G, f64>> {
    confusions
        .iter()
        .map(|(g, c)| {
            c.fpr()
                .map(|f| (g.clone(), f))
                .ok_or_else(|| Error::UndefinedFpr(format!("group '{g}' has no negatives")))
        })
        .collect()
}

/// `min / max` of the given FPRs, 1 when all are zero.
pub fn fpr_ratio(fprs: impl IntoIterator<Item = f64>) -> f64 {
    let (lo, hi) = fprs
        .into_iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), f| (lo.min(f), hi.max(f)));
    if hi > 0.0 {
        lo / hi
    } else {
        1.0
    }
}

pub fn predictive_equality<G: Ord + Clone + Display>(
    decisions: &[u8],
    labels: &[u8],
    groups: &[G],
) -> Result<f64> {
    let confusions = group_confusions(decisions, labels, groups)?;
    if confusions.len() < 2 {
        return Err(Error::UndefinedFpr(format!(
            "predictive equality needs at least 2 groups, found {}",
            confusions.len()
        )));
    }
    Ok(fpr_ratio(group_fprs(&confusions)?.into_values()))
}

/// Area under the ROC curve with midrank handling of tied scores.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|y| **y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateData("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for k in &order[i..=j] {
            if labels[*k] == 1 {
                pos_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// Metrics of one policy run over one scenario seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub confusion: Confusion,
    pub loss: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub predictive_equality: f64,
    pub group_fprs: BTreeMap<String, f64>,
}

impl EvaluationReport {
    pub fn evaluate<G: Ord + Clone + Display>(
        decisions: &[u8],
        labels: &[u8],
        groups: &[G],
        lambda: f64,
    ) -> Result<Self> {
        let per_group = group_confusions(decisions, labels, groups)?;
        let confusion = per_group.values().fold(Confusion::default(), |a, c| a + *c);
        let fprs = group_fprs(&per_group)?;
        let predictive_equality = if fprs.len() < 2 {
            return Err(Error::UndefinedFpr(format!(
                "predictive equality needs at least 2 groups, found {}",
                fprs.len()
            )));
        } else {
            fpr_ratio(fprs.values().copied())
        };
        Ok(EvaluationReport {
            confusion,
            loss: confusion.loss(lambda),
            fpr: confusion.fpr().unwrap_or(0.0),
            tpr: confusion.tpr().unwrap_or(0.0),
            predictive_equality,
            group_fprs: fprs.into_iter().map(|(g, f)| (g.to_string(), f)).collect(),
        })
    }
}
