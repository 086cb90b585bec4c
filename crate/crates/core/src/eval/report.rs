use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvaluationReport;
use crate::capacity::ScenarioParams;
use crate::math::mean_std;
use crate::Result;

/// One (scenario, policy, seed) evaluation, flattened for delimited export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub pool: String,
    pub batch_size: usize,
    pub deferral_rate: f64,
    pub absence_rate: f64,
    pub sigma_d: f64,
    pub seed: u64,
    pub policy: String,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub loss: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub predictive_equality: f64,
}

impl ResultRecord {
    pub fn new(params: &ScenarioParams, policy: &str, report: &EvaluationReport) -> Self {
        let c = report.confusion;
        ResultRecord {
            pool: params.pool.name().to_owned(),
            batch_size: params.batch_size,
            deferral_rate: params.deferral_rate,
            absence_rate: params.absence_rate,
            sigma_d: params.distribution.sigma(),
            seed: params.seed,
            policy: policy.to_owned(),
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            loss: report.loss,
            fpr: report.fpr,
            tpr: report.tpr,
            predictive_equality: report.predictive_equality,
        }
    }

    fn combo_key(&self) -> (String, usize, u64, u64, u64) {
        (
            self.pool.clone(),
            self.batch_size,
            self.deferral_rate.to_bits(),
            self.absence_rate.to_bits(),
            self.sigma_d.to_bits(),
        )
    }
}

pub fn write_results_csv(records: &[ResultRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub loss_mean: f64,
    pub loss_std: f64,
    pub pe_mean: f64,
    pub pe_std: f64,
    pub n_seeds: usize,
}

/// One scenario combination aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub pool: String,
    pub batch_size: usize,
    pub deferral_rate: f64,
    pub absence_rate: f64,
    pub sigma_d: f64,
    /// Aligned with `SummaryTable::policies`; `None` when a policy has no records.
    pub policies: Vec<Option<PolicySummary>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub model_only_loss: f64,
    pub model_only_pe: f64,
    pub policies: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

/// Aggregates records into mean and sample standard deviation across seeds.
/// Rows follow the first appearance of each scenario combination.
pub fn summarize(records: &[ResultRecord], policies: &[String], model_only: &EvaluationReport) -> SummaryTable {
    let mut keys = Vec::new();
    for r in records {
        if !keys.contains(&r.combo_key()) {
            keys.push(r.combo_key());
        }
    }
    let rows = keys
        .iter()
        .map(|key| {
            let first = records.iter().find(|r| &r.combo_key() == key).expect("key from records");
            let policies = policies
                .iter()
                .map(|p| {
                    let sel: Vec<&ResultRecord> = records
                        .iter()
                        .filter(|r| &r.combo_key() == key && &r.policy == p)
                        .collect();
                    if sel.is_empty() {
                        return None;
                    }
                    let losses: Vec<f64> = sel.iter().map(|r| r.loss).collect();
                    let pes: Vec<f64> = sel.iter().map(|r| r.predictive_equality).collect();
                    let (loss_mean, loss_std) = mean_std(&losses);
                    let (pe_mean, pe_std) = mean_std(&pes);
                    Some(PolicySummary {
                        loss_mean,
                        loss_std,
                        pe_mean,
                        pe_std,
                        n_seeds: sel.len(),
                    })
                })
                .collect();
            SummaryRow {
                pool: first.pool.clone(),
                batch_size: first.batch_size,
                deferral_rate: first.deferral_rate,
                absence_rate: first.absence_rate,
                sigma_d: first.sigma_d,
                policies,
            }
        })
        .collect();
    SummaryTable {
        model_only_loss: model_only.loss,
        model_only_pe: model_only.predictive_equality,
        policies: policies.to_vec(),
        rows,
    }
}

impl SummaryTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = [
            "pool",
            "batch_size",
            "deferral_rate",
            "absence_rate",
            "sigma_d",
            "model_only_loss",
            "model_only_pe",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for p in &self.policies {
            for suffix in ["loss_mean", "loss_std", "pe_mean", "pe_std", "n_seeds"] {
                header.push(format!("{p}_{suffix}"));
            }
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.pool.clone(),
                row.batch_size.to_string(),
                row.deferral_rate.to_string(),
                row.absence_rate.to_string(),
                row.sigma_d.to_string(),
                self.model_only_loss.to_string(),
                self.model_only_pe.to_string(),
            ];
            for s in &row.policies {
                match s {
                    Some(s) => rec.extend([
                        s.loss_mean.to_string(),
                        s.loss_std.to_string(),
                        s.pe_mean.to_string(),
                        s.pe_std.to_string(),
                        s.n_seeds.to_string(),
                    ]),
                    None => rec.extend(std::iter::repeat_n(String::new(), 5)),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Markdown table with loss as `mean ± std` and PE as the mean.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Pool | Batch Size | Deferral Rate | Absence Rate | σ_d | Model Only Loss | Model Only PE |");
        for p in &self.policies {
            let _ = write!(out, " {p} Loss | {p} PE |");
        }
        out.push_str("\n|---|---|---|---|---|---|---|");
        for _ in &self.policies {
            out.push_str("---|---|");
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(
                out,
                "| {} | {} | {} | {} | {} | {:.1} | {:.2} |",
                row.pool,
                row.batch_size,
                row.deferral_rate,
                row.absence_rate,
                row.sigma_d,
                self.model_only_loss,
                self.model_only_pe
            );
            for s in &row.policies {
                match s {
                    Some(s) => {
                        let _ = write!(out, " {:.1} ± {:.1} | {:.2} |", s.loss_mean, s.loss_std, s.pe_mean);
                    }
                    None => out.push_str(" - | - |"),
                }
            }
            out.push('\n');
        }
        out
    }
}
