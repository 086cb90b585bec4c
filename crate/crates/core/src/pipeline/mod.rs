//! Config-driven orchestration of the experiment stages.
//!
//! Stages communicate through JSON artifacts in the output directory, each
//! stamped with the config hash and a stage version. Every component seed is
//! derived from `master_seed` through [`crate::seed::derive`].

mod artifacts;
mod config;

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::{enumerate_grid, BatchPlan, CapacityMatrix, CapacityScenario, ScenarioParams, ScenarioSeeds};
use crate::data::{
    fit_reference_scorer, load_dataset, make_temporal_splits, select_threshold, synthetic, Dataset, FeatureScaler,
    FittedScorer, Group, Instance, Scorer, SplitDataset,
};
use crate::deferral::{capacity_violations, run_policy, write_assignments_csv, DecisionMaker, Policy, PolicyInputs};
use crate::eval::{lambda_from_threshold, summarize, write_results_csv, EvaluationReport, ResultRecord, SummaryTable};
use crate::expertise::{build_training_set, ModelEstimator, OracleEstimator, OutcomeEstimator, OutcomeModel};
use crate::experts::{
    error_probabilities, full_prediction_table, generate_team, mean_error_rates, ErrorTargets, ExpertGroup, ExpertParams,
    PredictionEntry, PredictionLog,
};
use crate::{seed, Error, Result};

pub use artifacts::*;
pub use config::{DataConfig, EstimatorKind, RunConfig, TrainingRegime};

pub const STAGE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    ValidateConfig,
    GenExperts,
    GenScenarios,
    RunPolicies,
    Report,
    Run,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::ValidateConfig => "validate-config",
            Stage::GenExperts => "gen-experts",
            Stage::GenScenarios => "gen-scenarios",
            Stage::RunPolicies => "run-policies",
            Stage::Report => "report",
            Stage::Run => "run",
        }
    }
}

/// Per-expert check of the calibrated error rates on the calibration sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertCalibration {
    pub id: String,
    pub group: ExpertGroup,
    pub targets: Option<ErrorTargets>,
    pub fpr: f64,
    pub fnr: f64,
    /// Mean closed-form FPR over each group's negatives; `None` without negatives.
    pub fpr_protected: Option<f64>,
    pub fpr_reference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamArtifact {
    pub threshold: f64,
    pub lambda: f64,
    /// Absent when scores come from a dataset column.
    pub scorer: Option<FittedScorer>,
    pub feature_names: Vec<String>,
    pub protected_index: usize,
    /// Fitted on deferral-train raw features; experts see standardized inputs.
    pub feature_scaler: FeatureScaler,
    pub experts: Vec<ExpertParams>,
    pub calibration: Vec<ExpertCalibration>,
}

impl TeamArtifact {
    pub fn expert_ids(&self) -> Vec<String> {
        self.experts.iter().map(|e| e.id.clone()).collect()
    }

    pub fn groups(&self) -> Vec<ExpertGroup> {
        self.experts.iter().map(|e| e.group).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub params: ScenarioParams,
    pub batch_of: Vec<usize>,
    pub capacity: CapacityMatrix,
}

impl ScenarioRecord {
    pub fn to_scenario(&self) -> CapacityScenario {
        let mut sizes = vec![0; self.capacity.rows.len()];
        for b in &self.batch_of {
            sizes[*b] += 1;
        }
        CapacityScenario {
            params: self.params.clone(),
            batches: BatchPlan {
                batch_of: self.batch_of.clone(),
                sizes,
            },
            capacity: self.capacity.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenariosArtifact {
    pub n_instances: usize,
    pub scenarios: Vec<ScenarioRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModelSummary {
    pub train_examples: usize,
    pub val_examples: usize,
    pub train_log_loss: f64,
    pub val_log_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunsArtifact {
    pub threshold: f64,
    pub lambda: f64,
    pub policies: Vec<String>,
    pub model_only: EvaluationReport,
    pub outcome_model: Option<OutcomeModelSummary>,
    pub records: Vec<ResultRecord>,
}

/// A validated config plus its derived identity.
pub struct Pipeline {
    pub config: RunConfig,
    pub out: PathBuf,
    pub hash: String,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash()?;
        let out = config.output_dir.clone();
        Ok(Pipeline { config, out, hash })
    }

    fn header(&self, stage: Stage) -> Header {
        Header {
            config_hash: self.hash.clone(),
            stage: stage.name().to_owned(),
            stage_version: STAGE_VERSION,
        }
    }

    fn derived(&self, label: &str, indices: &[u64]) -> u64 {
        seed::derive(self.config.master_seed, label, indices)
    }

    pub fn execute(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::ValidateConfig => {
                info!("config valid (hash {})", self.hash);
                Ok(())
            }
            Stage::GenExperts => self.staged(stage, Self::gen_experts),
            Stage::GenScenarios => self.staged(stage, Self::gen_scenarios),
            Stage::RunPolicies => self.staged(stage, Self::run_policies),
            Stage::Report => self.staged(stage, Self::report),
            Stage::Run => {
                for s in [Stage::GenExperts, Stage::GenScenarios, Stage::RunPolicies, Stage::Report] {
                    self.execute(s)?;
                }
                Ok(())
            }
        }
    }

    fn staged(&self, stage: Stage, body: fn(&Self) -> Result<()>) -> Result<()> {
        info!("stage {} -> {}", stage.name(), self.out.display());
        let marker = Marker::start(&self.out, stage.name()).map_err(|e| e.in_stage(stage.name()))?;
        body(self).map_err(|e| e.in_stage(stage.name()))?;
        marker.finish().map_err(|e| e.in_stage(stage.name()))
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let data = &self.config.data;
        match (self.config.dataset_path(), &data.synthetic) {
            (Some(path), _) => load_dataset(path, data.schema.as_ref().expect("validated schema")),
            (None, Some(s)) => Ok(synthetic::generate(s)),
            (None, None) => Err(Error::Config("no data source".into())),
        }
    }

    fn splits(&self, dataset: &Dataset) -> Result<SplitDataset> {
        make_temporal_splits(dataset, &self.config.split)
    }

    /// Splits with model scores attached and features standardized.
    pub fn prepared_splits(&self, team: &TeamArtifact) -> Result<SplitDataset> {
        let dataset = self.load_dataset()?;
        let mut splits = self.splits(&dataset)?;
        attach_scores(&mut splits, team.scorer.as_ref())?;
        standardize(&mut splits, &team.feature_scaler);
        Ok(splits)
    }

    pub fn read_team(&self) -> Result<TeamArtifact> {
        read_json(&self.out.join(TEAM_FILE), &self.header(Stage::GenExperts))
    }

    pub fn read_scenarios(&self) -> Result<ScenariosArtifact> {
        read_json(&self.out.join(SCENARIOS_FILE), &self.header(Stage::GenScenarios))
    }

    pub fn read_runs(&self) -> Result<RunsArtifact> {
        read_json(&self.out.join(RUNS_FILE), &self.header(Stage::RunPolicies))
    }

    fn gen_experts(&self) -> Result<()> {
        let cfg = &self.config;
        let dataset = self.load_dataset()?;
        info!("dataset: {} rows, {} features", dataset.instances.len(), dataset.dim());
        let mut splits = self.splits(&dataset)?;
        let scorer = if dataset.has_scores() {
            None
        } else {
            let mut scorer_cfg = cfg.scorer.clone();
            scorer_cfg.seed = self.derived("scorer", &[]);
            let fitted = fit_reference_scorer(&splits.classifier_train, &splits.classifier_val, &scorer_cfg)?;
            info!("reference scorer AUC train {:.4} val {:?}", fitted.train_auc, fitted.val_auc);
            Some(fitted)
        };
        attach_scores(&mut splits, scorer.as_ref())?;

        let val_scores = splits.classifier_val.iter().map(Instance::score_or_err).collect::<Result<Vec<_>>>()?;
        let val_labels: Vec<u8> = splits.classifier_val.iter().map(|i| i.label).collect();
        let threshold = select_threshold(&val_scores, &val_labels, cfg.target_fpr)?;
        let lambda = match cfg.lambda {
            Some(l) => l,
            None => lambda_from_threshold(threshold)?,
        };
        info!("threshold {threshold:.6}, lambda {lambda:.6}");

        let feature_scaler = FeatureScaler::fit(&splits.deferral_train)?;
        standardize(&mut splits, &feature_scaler);
        let mut team_cfg = cfg.team.clone();
        team_cfg.seed = self.derived("team", &[]);
        let protected_index = dataset.protected_index();
        let experts = generate_team(&team_cfg, dataset.dim(), protected_index, &splits.deferral_train, threshold)?;
        let calibration = experts
            .iter()
            .map(|e| calibration_summary(e, &splits.deferral_train, threshold))
            .collect::<Result<Vec<_>>>()?;
        info!("generated {} experts", experts.len());

        let artifact = TeamArtifact {
            threshold,
            lambda,
            scorer,
            feature_names: dataset.feature_names.clone(),
            protected_index,
            feature_scaler,
            experts,
            calibration,
        };
        write_json(&self.out.join(TEAM_FILE), self.header(Stage::GenExperts), &artifact)
    }

    /// Scenario draws for the test split; stream seeds come from the master seed
    /// and the grid seed.
    pub fn scenario_params(&self) -> Result<Vec<ScenarioParams>> {
        Ok(enumerate_grid(&self.config.grid)?
            .scenarios()
            .into_iter()
            .map(|mut p| {
                p.seeds = ScenarioSeeds::from_master(self.derived("scenario", &[p.seed]));
                p
            })
            .collect())
    }

    fn gen_scenarios(&self) -> Result<()> {
        let team = self.read_team()?;
        let dataset = self.load_dataset()?;
        let test = self.splits(&dataset)?.test;
        let groups = team.groups();
        let params = self.scenario_params()?;
        info!("{} scenarios over {} test instances", params.len(), test.len());
        let scenarios = params
            .par_iter()
            .map(|p| CapacityScenario::generate(test.len(), &groups, p))
            .collect::<Result<Vec<_>>>()?;
        let dir = self.out.join(SCENARIO_DIR);
        fs::create_dir_all(&dir)?;
        let ids = team.expert_ids();
        for s in &scenarios {
            let label = s.params.label();
            s.capacity.write_csv(&ids, dir.join(format!("{label}_capacity.csv")))?;
            write_batches_csv(&test, &s.batches, &dir.join(format!("{label}_batches.csv")))?;
        }
        let artifact = ScenariosArtifact {
            n_instances: test.len(),
            scenarios: scenarios
                .into_iter()
                .map(|s| ScenarioRecord {
                    params: s.params,
                    batch_of: s.batches.batch_of,
                    capacity: s.capacity,
                })
                .collect(),
        };
        write_json(&self.out.join(SCENARIOS_FILE), self.header(Stage::GenScenarios), &artifact)
    }

    /// Expert decisions gathered under the training regime: one per deferred
    /// instance, none for automated ones.
    pub fn regime_log(&self, team: &TeamArtifact, instances: &[Instance], label: &str) -> Result<PredictionLog> {
        let prediction_seed = self.derived("predictions", &[]);
        let table = full_prediction_table(&team.experts, instances, team.threshold, prediction_seed)?;
        let params = self.config.training.params(self.derived("training", &[seed::key_of(label)]));
        let scenario = CapacityScenario::generate(instances.len(), &team.groups(), &params)?;
        let inputs = PolicyInputs {
            instances,
            scenario: &scenario,
            estimator: None,
            lambda: team.lambda,
            auto_decline_rate: self.config.auto_decline_rate,
            seed: self.derived("training/rel", &[seed::key_of(label)]),
        };
        let records = run_policy(Policy::Rel, &inputs, &table)?;
        let ids = team.expert_ids();
        let log = PredictionLog {
            entries: records
                .iter()
                .filter_map(|r| match r.decision_maker {
                    DecisionMaker::Expert(j) => Some(PredictionEntry {
                        instance_id: r.instance_id,
                        expert_id: ids[j].clone(),
                        prediction: r.final_decision,
                    }),
                    _ => None,
                })
                .collect(),
        };
        log.check_single_per_instance()?;
        Ok(log)
    }

    fn run_policies(&self) -> Result<()> {
        let cfg = &self.config;
        let team = self.read_team()?;
        let scenarios = self.read_scenarios()?;
        let splits = self.prepared_splits(&team)?;
        if scenarios.n_instances != splits.test.len() {
            return Err(Error::Stale {
                path: self.out.join(SCENARIOS_FILE),
                reason: format!("built for {} test instances, found {}", scenarios.n_instances, splits.test.len()),
            });
        }
        let ids = team.expert_ids();

        let needs_estimator = cfg.policies.iter().any(|p| p.needs_estimator());
        let mut model = None;
        let mut summary = None;
        if needs_estimator && cfg.estimator == EstimatorKind::Learned {
            let log = self.regime_log(&team, &splits.deferral_train, "deferral_train")?;
            log.write_csv(self.out.join(TRAINING_LOG_CSV))?;
            let examples = build_training_set(&log, &splits.deferral_train)?;
            info!("fitting outcome model on {} logged decisions", examples.len());
            let m = OutcomeModel::fit(&examples, &cfg.outcome_model, self.derived("outcome_model", &[]))?;
            let val_log = self.regime_log(&team, &splits.deferral_val, "deferral_val")?;
            let val_examples = build_training_set(&val_log, &splits.deferral_val)?;
            let val_log_loss = if val_examples.is_empty() {
                None
            } else {
                Some(m.log_loss(&val_examples)?)
            };
            summary = Some(OutcomeModelSummary {
                train_examples: examples.len(),
                val_examples: val_examples.len(),
                train_log_loss: m.log_loss(&examples)?,
                val_log_loss,
            });
            write_json(&self.out.join(OUTCOME_MODEL_FILE), self.header(Stage::RunPolicies), &m)?;
            model = Some(m);
        }
        let learned = model.as_ref().map(|m| ModelEstimator::new(m, &ids));
        let oracle = OracleEstimator {
            team: &team.experts,
            threshold: team.threshold,
        };
        let estimator: Option<&dyn OutcomeEstimator> = match (needs_estimator, cfg.estimator) {
            (false, _) => None,
            (true, EstimatorKind::Learned) => learned.as_ref().map(|e| e as &dyn OutcomeEstimator),
            (true, EstimatorKind::Oracle) => Some(&oracle),
        };

        let test = &splits.test;
        let predictions = full_prediction_table(&team.experts, test, team.threshold, self.derived("predictions", &[]))?;
        predictions.write_csv(self.out.join(TEST_PREDICTIONS_CSV))?;
        let labels: Vec<u8> = test.iter().map(|i| i.label).collect();
        let groups: Vec<Group> = test.iter().map(|i| i.group).collect();
        let model_decisions = test
            .iter()
            .map(|i| Ok(u8::from(i.score_or_err()? >= team.threshold)))
            .collect::<Result<Vec<u8>>>()?;
        let model_only = EvaluationReport::evaluate(&model_decisions, &labels, &groups, team.lambda)?;

        let scenario_list: Vec<CapacityScenario> = scenarios.scenarios.iter().map(ScenarioRecord::to_scenario).collect();
        let jobs: Vec<(usize, Policy)> = (0..scenario_list.len())
            .flat_map(|s| cfg.policies.iter().map(move |p| (s, *p)))
            .collect();
        info!("running {} policy jobs", jobs.len());
        let dir = self.out.join(ASSIGNMENT_DIR);
        fs::create_dir_all(&dir)?;
        let records = jobs
            .par_iter()
            .map(|(s, policy)| {
                let scenario = &scenario_list[*s];
                let inputs = PolicyInputs {
                    instances: test,
                    scenario,
                    estimator,
                    lambda: team.lambda,
                    auto_decline_rate: cfg.auto_decline_rate,
                    seed: self.derived("policy", &[scenario.params.seed]),
                };
                let assignment = run_policy(*policy, &inputs, &predictions)?;
                let violations = capacity_violations(&assignment, scenario);
                if violations > 0 {
                    return Err(Error::Integrity(format!(
                        "{} on {} broke {violations} capacity limits",
                        policy,
                        scenario.params.label()
                    )));
                }
                write_assignments_csv(&assignment, &ids, dir.join(format!("{}_{policy}.csv", scenario.params.label())))?;
                // records are grouped by batch; realign with test order
                let mut decisions = vec![0u8; test.len()];
                let pos: std::collections::HashMap<u64, usize> = test.iter().enumerate().map(|(i, x)| (x.id, i)).collect();
                for r in &assignment {
                    decisions[pos[&r.instance_id]] = r.final_decision;
                }
                let report = EvaluationReport::evaluate(&decisions, &labels, &groups, team.lambda)?;
                Ok(ResultRecord::new(&scenario.params, policy.name(), &report))
            })
            .collect::<Result<Vec<_>>>()?;

        let artifact = RunsArtifact {
            threshold: team.threshold,
            lambda: team.lambda,
            policies: cfg.policies.iter().map(|p| p.name().to_owned()).collect(),
            model_only,
            outcome_model: summary,
            records,
        };
        write_json(&self.out.join(RUNS_FILE), self.header(Stage::RunPolicies), &artifact)
    }

    pub fn summary(&self) -> Result<SummaryTable> {
        let runs = self.read_runs()?;
        Ok(summarize(&runs.records, &runs.policies, &runs.model_only))
    }

    fn report(&self) -> Result<()> {
        let runs = self.read_runs()?;
        let table = summarize(&runs.records, &runs.policies, &runs.model_only);
        write_results_csv(&runs.records, self.out.join(RESULTS_CSV))?;
        table.write_csv(self.out.join(REPORT_CSV))?;
        fs::write(self.out.join(REPORT_MD), table.to_markdown())?;
        info!("report with {} rows written", table.rows.len());
        Ok(())
    }
}

fn attach_scores(splits: &mut SplitDataset, scorer: Option<&FittedScorer>) -> Result<()> {
    let mut missing = None;
    splits.for_each_mut(|inst| match scorer {
        Some(s) => inst.score = Some(s.model.score(&inst.features)),
        None if inst.score.is_none() => missing = Some(inst.id),
        None => {}
    });
    match missing {
        Some(id) => Err(Error::Integrity(format!("instance {id} has no score and no scorer is available"))),
        None => Ok(()),
    }
}

fn standardize(splits: &mut SplitDataset, scaler: &FeatureScaler) {
    splits.for_each_mut(|inst| inst.features = scaler.transform(&inst.features));
}

fn calibration_summary(e: &ExpertParams, sample: &[Instance], t: f64) -> Result<ExpertCalibration> {
    let (fpr, fnr) = mean_error_rates(e, sample, t)?;
    let mut by_group = [(0.0, 0usize); 2];
    for inst in sample.iter().filter(|i| i.label == 0) {
        let p = error_probabilities(e, &inst.features, inst.score_or_err()?, t)?;
        let slot = &mut by_group[usize::from(inst.group == Group::Reference)];
        slot.0 += p.p_fp;
        slot.1 += 1;
    }
    let mean = |(s, n): (f64, usize)| (n > 0).then(|| s / n as f64);
    Ok(ExpertCalibration {
        id: e.id.clone(),
        group: e.group,
        targets: e.targets,
        fpr,
        fnr,
        fpr_protected: mean(by_group[0]),
        fpr_reference: mean(by_group[1]),
    })
}

fn write_batches_csv(instances: &[Instance], plan: &BatchPlan, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["instance_id", "batch"])?;
    for (inst, b) in instances.iter().zip(&plan.batch_of) {
        w.write_record([inst.id.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
