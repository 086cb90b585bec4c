//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails.

mod common;

use std::collections::HashMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use defersim::capacity::{enumerate_grid, CapacityScenario, GridConfig, Pool, ScenarioSeeds};
use defersim::data::{Group, Instance};
use defersim::deferral::{assign_batch, greedy_assign, optimal_assign, DecisionMaker, Policy, PolicyInputs};
use defersim::eval::{elkan_threshold_consistency_check, fpr_ratio, predictive_equality};
use defersim::expertise::OracleEstimator;
use defersim::experts::{full_prediction_table, generate_team, transform_score, ExpertGroup, ExpertParams, TeamConfig};
use defersim::pipeline::{Pipeline, RunConfig, Stage};
use defersim::seed;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn score_transform() -> Outcome {
    let tol = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t: f64 = rng.random_range(0.001..0.999);
        ensure!(transform_score(t, t).unwrap() == 0.0, "M(t) != 0 at t = {t}");
        ensure!((transform_score(0.0, t).unwrap() + 0.5).abs() <= tol, "M(0) != -0.5 at t = {t}");
        ensure!((transform_score(1.0, t).unwrap() - 0.5).abs() <= tol, "M(1) != 0.5 at t = {t}");
        let delta = 10f64.powf(rng.random_range(-12.0..-4.0));
        for m in [t - delta, t + delta, rng.random_range(0.0..1.0)] {
            let m = m.clamp(0.0, 1.0);
            let got = transform_score(m, t).unwrap();
            let err = (got - common::transform(m, t)).abs();
            worst = worst.max(err);
            ensure!(err <= tol, "M({m}) at t = {t}: {got} vs {}", common::transform(m, t));
            // both pieces shrink to 0 at the breakpoint
            let bound = (m - t).abs() / (2.0 * t.min(1.0 - t)) + tol;
            if (m - t).abs() <= delta * (1.0 + 1e-9) {
                ensure!(got.abs() <= bound, "discontinuity at t = {t}: M({m}) = {got}");
            }
        }
    }
    Ok(format!("1000 pairs, max deviation {worst:.1e}"))
}

struct TeamFixture {
    sample: common::ScoredSample,
    team: Vec<ExpertParams>,
}

fn team_fixture() -> TeamFixture {
    let sample = common::scored_sample(&common::synthetic(8, 2500, 21));
    let cfg = TeamConfig {
        seed: 77,
        ..TeamConfig::default()
    };
    let d = sample.instances[0].features.len();
    let team = generate_team(&cfg, d, sample.protected_index, &sample.instances, sample.threshold).unwrap();
    TeamFixture { sample, team }
}

fn expert_calibration(fx: &TeamFixture) -> Outcome {
    let counts = |g: ExpertGroup| fx.team.iter().filter(|e| e.group == g).count();
    ensure!(fx.sample.instances.len() == 20_000, "sample has {} rows", fx.sample.instances.len());
    ensure!(
        [ExpertGroup::Standard, ExpertGroup::Unfair, ExpertGroup::Agreeing, ExpertGroup::Sparse].map(counts) == [20, 10, 10, 10],
        "group split differs from 20/10/10/10"
    );
    let t = fx.sample.threshold;
    let mut worst = 0.0f64;
    for e in &fx.team {
        let (mut fp, mut n0, mut fnr, mut n1) = (0.0, 0.0, 0.0, 0.0);
        for inst in &fx.sample.instances {
            let (p_fp, p_fn) = common::flip_probs(e, &inst.features, inst.score.unwrap(), t);
            if inst.label == 0 {
                fp += p_fp;
                n0 += 1.0;
            } else {
                fnr += p_fn;
                n1 += 1.0;
            }
        }
        let target = e.targets.ok_or(format!("expert {} has no targets", e.id))?;
        let dev = ((fp / n0 - target.fpr).abs()).max((fnr / n1 - target.fnr).abs());
        worst = worst.max(dev);
        ensure!(dev <= 0.001, "expert {} off target by {dev}", e.id);
    }
    Ok(format!("50 experts, max deviation {worst:.1e}"))
}

fn monte_carlo_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 6;
    let t = 0.3;
    let team: Vec<ExpertParams> = (0..20)
        .map(|k| ExpertParams {
            id: format!("mc{k}"),
            group: ExpertGroup::Standard,
            beta0: rng.random_range(-4.0..-1.0),
            beta1: rng.random_range(-1.5..0.5),
            alpha: rng.random_range(0.5..2.0),
            w: (0..d).map(|_| rng.sample(StandardNormal)).collect(),
            w_m: rng.random_range(-2.0..0.0),
            targets: None,
        })
        .collect();
    let instances: Vec<Instance> = (0..100_000u64)
        .map(|id| Instance {
            id,
            features: (0..d).map(|_| rng.sample(StandardNormal)).collect(),
            label: u8::from(rng.random_bool(0.3)),
            group: Group::Reference,
            month: 1,
            score: Some(rng.random_range(0.0..1.0)),
        })
        .collect();
    let table = full_prediction_table(&team, &instances, t, 99).unwrap();
    let mut worst = 0.0f64;
    for (j, e) in team.iter().enumerate() {
        let (mut flips, mut mean, mut var) = (0.0, 0.0, 0.0);
        for (inst, pred) in instances.iter().zip(table.column(j)) {
            let (p_fp, p_fn) = common::flip_probs(e, &inst.features, inst.score.unwrap(), t);
            let p = if inst.label == 0 { p_fp } else { p_fn };
            mean += p;
            var += p * (1.0 - p);
            if pred != inst.label {
                flips += 1.0;
            }
        }
        let z = (flips - mean) / var.sqrt();
        worst = worst.max(z.abs());
        ensure!(z.abs() <= 3.0, "expert {}: {flips} flips vs expected {mean:.1} (z = {z:.2})", e.id);
    }
    Ok(format!("20 experts x 100k draws, max |z| {worst:.2}"))
}

fn random_caps(rng: &mut ChaCha8Rng, n: usize, m: usize, max_cap: u32) -> Vec<u32> {
    let mut caps: Vec<u32> = (0..m).map(|_| rng.random_range(0..=max_cap)).collect();
    while caps.iter().sum::<u32>() < n as u32 {
        caps[rng.random_range(0..m)] += 1;
    }
    caps
}

fn respects(assign: &[usize], caps: &[u32]) -> bool {
    let mut load = vec![0u32; caps.len()];
    for j in assign {
        load[*j] += 1;
    }
    load.iter().zip(caps).all(|(l, c)| l <= c)
}

fn assignment_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..100 {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=4);
        let caps = random_caps(&mut rng, n, m, n as u32);
        let costs: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.0..10.0)).collect();
        let assign = optimal_assign(&costs, n, &caps).map_err(|e| e.to_string())?;
        ensure!(respects(&assign, &caps), "trial {trial}: capacity exceeded");
        let got = common::assignment_cost(&costs, m, &assign);
        let best = common::brute_force_min(&costs, n, &caps).unwrap();
        ensure!(got == best, "trial {trial}: optimal_assign {got} vs enumeration {best}");
    }
    let mut max_gap = 0.0f64;
    for trial in 0..1000 {
        let (n, m) = (20, 10);
        let caps = random_caps(&mut rng, n, m, 4);
        let costs: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.0..1.0)).collect();
        let assign = optimal_assign(&costs, n, &caps).map_err(|e| e.to_string())?;
        ensure!(respects(&assign, &caps), "20x10 trial {trial}: capacity exceeded");
        let opt = common::assignment_cost(&costs, m, &assign);
        let greedy: Vec<usize> = greedy_assign(&costs, n, &caps)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|c| c.ok_or("greedy left a row unassigned"))
            .collect::<Result<_, _>>()?;
        let greedy_total = common::assignment_cost(&costs, m, &greedy);
        ensure!(opt <= greedy_total, "20x10 trial {trial}: optimal {opt} > greedy {greedy_total}");
        let flow = common::min_cost_flow(&costs, n, &caps).unwrap();
        ensure!((opt - flow).abs() <= 1e-7, "20x10 trial {trial}: optimal {opt} vs min-cost flow {flow}");
        max_gap = max_gap.max(greedy_total - opt);
    }
    Ok(format!("100 exact matches, 1000 x (optimal <= greedy), max greedy gap {max_gap:.3}"))
}

const RUN_CONFIG: &str = r#"
master_seed = 11

[data.synthetic]
months = 8
per_month = 10000
prevalence = 0.05
seed = 3
"#;

struct RunFixture {
    _dir: tempfile::TempDir,
    pipeline: Pipeline,
}

fn full_run(workers: usize) -> RunFixture {
    let dir = tempfile::tempdir().unwrap();
    let path = common::write_config(dir.path(), RUN_CONFIG);
    let mut config = RunConfig::load(&path).unwrap();
    config.output_dir = dir.path().join("out");
    let pipeline = Pipeline::new(config).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
    pool.install(|| pipeline.execute(Stage::Run)).unwrap();
    RunFixture { _dir: dir, pipeline }
}

fn out_dir(run: &RunFixture) -> &Path {
    &run.pipeline.out
}

fn capacity_feasibility(run: &RunFixture) -> Outcome {
    let team = run.pipeline.read_team().map_err(|e| e.to_string())?;
    let scenarios = run.pipeline.read_scenarios().map_err(|e| e.to_string())?;
    ensure!(scenarios.scenarios.len() == 80, "{} scenarios", scenarios.scenarios.len());
    let index: HashMap<String, usize> = team.expert_ids().into_iter().enumerate().map(|(j, id)| (id, j)).collect();
    let mut checked = 0;
    for rec in &scenarios.scenarios {
        let p = &rec.params;
        let n_batches = rec.capacity.rows.len();
        let mut sizes = vec![0usize; n_batches];
        for b in &rec.batch_of {
            sizes[*b] += 1;
        }
        for (b, size) in sizes.iter().enumerate() {
            ensure!(b + 1 == n_batches || *size == p.batch_size, "{}: batch {b} has {size} rows", p.label());
            let budget = (p.deferral_rate * *size as f64).round() as u32;
            let sum: u32 = rec.capacity.rows[b].iter().sum();
            ensure!(sum == budget, "{}: batch {b} row sum {sum} != budget {budget}", p.label());
        }
        for policy in Policy::ALL {
            let path = out_dir(run).join("assignments").join(format!("{}_{}.csv", p.label(), policy.name()));
            let mut load = vec![vec![0u32; team.experts.len()]; n_batches];
            let mut reader = csv::Reader::from_path(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            for row in reader.records() {
                let row = row.map_err(|e| e.to_string())?;
                let batch: usize = row[1].parse().map_err(|_| "bad batch column")?;
                if let Some(j) = index.get(&row[2]) {
                    load[batch][*j] += 1;
                }
            }
            for (b, (l, cap)) in load.iter().zip(&rec.capacity.rows).enumerate() {
                for (j, (used, c)) in l.iter().zip(cap).enumerate() {
                    ensure!(used <= c, "{} {policy}: batch {b} expert {j} got {used} > {c}", p.label());
                }
            }
            checked += 1;
        }
    }
    Ok(format!("80 scenarios, {checked} assignment files, zero violations"))
}

fn oracle_dominance(run: &RunFixture) -> Outcome {
    let team = run.pipeline.read_team().map_err(|e| e.to_string())?;
    let test = run.pipeline.prepared_splits(&team).map_err(|e| e.to_string())?.test;
    let (t, lambda) = (team.threshold, team.lambda);
    let oracle = OracleEstimator {
        team: &team.experts,
        threshold: t,
    };
    let mut scenarios: Vec<CapacityScenario> = run
        .pipeline
        .read_scenarios()
        .map_err(|e| e.to_string())?
        .scenarios
        .iter()
        .map(|r| r.to_scenario())
        .collect();
    let groups = team.groups();
    for mut p in enumerate_grid(&GridConfig::pool_table((0..5).collect())).unwrap().scenarios() {
        p.seeds = ScenarioSeeds::from_master(seed::derive(11, "acceptance/pools", &[p.seed]));
        scenarios.push(CapacityScenario::generate(test.len(), &groups, &p).map_err(|e| e.to_string())?);
    }
    let cost = |inst: &Instance, dm: &DecisionMaker| match dm {
        DecisionMaker::AutoDecline => lambda * f64::from(1 - inst.label),
        DecisionMaker::AutoAccept => f64::from(inst.label),
        DecisionMaker::Expert(j) => common::expected_cost(&team.experts[*j], inst, t, lambda),
    };
    let (mut batches, mut agreeing, mut agreeing_strict) = (0usize, 0usize, 0usize);
    for sc in &scenarios {
        let inputs = PolicyInputs {
            instances: &test,
            scenario: sc,
            estimator: Some(&oracle),
            lambda,
            auto_decline_rate: 0.05,
            seed: seed::derive(11, "acceptance/rel", &[sc.params.seed]),
        };
        for (b, members) in sc.batches.members().iter().enumerate() {
            let total = |policy| -> Result<f64, String> {
                let makers = assign_batch(policy, &inputs, b, members).map_err(|e| e.to_string())?;
                Ok(members.iter().zip(&makers).map(|(p, dm)| cost(&test[*p], dm)).sum())
            };
            let (linear, rel) = (total(Policy::Linear)?, total(Policy::Rel)?);
            ensure!(linear <= rel, "{} batch {b}: linear {linear} > rel {rel}", sc.params.label());
            batches += 1;
            if sc.params.pool == Pool::Agreeing {
                agreeing += 1;
                agreeing_strict += usize::from(linear < rel);
            }
        }
    }
    let share = agreeing_strict as f64 / agreeing as f64;
    ensure!(share >= 0.9, "linear strictly better on only {:.1}% of agreeing-pool batches", 100.0 * share);
    Ok(format!(
        "{} scenarios, {batches} batches, strictly lower on {agreeing_strict}/{agreeing} agreeing-pool batches",
        scenarios.len()
    ))
}

fn elkan_consistency() -> Outcome {
    // perfectly calibrated: level k/L holds exactly k positives out of L
    let levels = 1000;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for k in 1..levels {
        for i in 0..levels {
            scores.push(k as f64 / levels as f64);
            labels.push(u8::from(i < k));
        }
    }
    let mut notes = Vec::new();
    for lambda in [0.054, 0.5, 1.0] {
        let report = elkan_threshold_consistency_check(&scores, &labels, lambda, levels).map_err(|e| e.to_string())?;
        // per-level oracle: loss at threshold i/L
        let loss_at = |i: usize| -> f64 {
            (1..levels)
                .map(|k| {
                    let flagged = k >= i;
                    if flagged {
                        lambda * (levels - k) as f64
                    } else {
                        k as f64
                    }
                })
                .sum()
        };
        let losses: Vec<f64> = (0..=levels).map(loss_at).collect();
        let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let argmins: Vec<f64> = (0..=levels)
            .filter(|i| (losses[*i] - best).abs() <= 1e-6)
            .map(|i| i as f64 / levels as f64)
            .collect();
        ensure!(report.optimal_thresholds == argmins, "lambda {lambda}: argmins {:?} vs oracle {argmins:?}", report.optimal_thresholds);
        let target = lambda / (1.0 + lambda);
        let step = 1.0 / levels as f64;
        for t in &argmins {
            ensure!((t - target).abs() <= step * (1.0 + 1e-9), "lambda {lambda}: optimum {t} vs {target}");
        }
        ensure!(report.consistent, "lambda {lambda}: report not consistent");
        notes.push(format!("{lambda}: {:?}", argmins));
    }
    Ok(notes.join(", "))
}

fn fairness_machinery(fx: &TeamFixture) -> Outcome {
    let t = fx.sample.threshold;
    let mut min_gap = f64::INFINITY;
    for e in fx.team.iter().filter(|e| e.group == ExpertGroup::Unfair) {
        let mut sums = [(0.0, 0.0); 2];
        for inst in fx.sample.instances.iter().filter(|i| i.label == 0) {
            let (p_fp, _) = common::flip_probs(e, &inst.features, inst.score.unwrap(), t);
            let slot = &mut sums[usize::from(inst.group == Group::Reference)];
            slot.0 += p_fp;
            slot.1 += 1.0;
        }
        let (prot, refr) = (sums[0].0 / sums[0].1, sums[1].0 / sums[1].1);
        ensure!(prot > refr, "unfair expert {}: protected FPR {prot} <= reference {refr}", e.id);
        min_gap = min_gap.min(prot - refr);
    }

    // hand tables: (group, negatives, false positives, positives)
    fn table(spec: &[(&'static str, usize, usize, usize)]) -> (Vec<u8>, Vec<u8>, Vec<&'static str>) {
        let (mut d, mut y, mut g) = (Vec::new(), Vec::new(), Vec::new());
        for (name, neg, fp, pos) in spec {
            for i in 0..*neg {
                d.push(u8::from(i < *fp));
                y.push(0);
                g.push(*name);
            }
            for i in 0..*pos {
                d.push(u8::from(i % 2 == 0));
                y.push(1);
                g.push(*name);
            }
        }
        (d, y, g)
    }
    let cases: [(&[(&str, usize, usize, usize)], f64); 4] = [
        (&[("a", 10, 2, 3), ("b", 10, 5, 4)], 0.4),
        (&[("a", 20, 2, 0), ("b", 10, 2, 5), ("c", 5, 2, 1)], 0.25),
        (&[("a", 8, 0, 2), ("b", 9, 0, 2)], 1.0),
        (&[("a", 10, 3, 1), ("b", 20, 6, 1)], 1.0),
    ];
    for (spec, expected) in cases {
        let (d, y, g) = table(spec);
        let pe = predictive_equality(&d, &y, &g).map_err(|e| e.to_string())?;
        ensure!((pe - expected).abs() <= 1e-12, "PE {pe} vs hand value {expected} for {spec:?}");
    }
    ensure!(fpr_ratio([0.0, 0.2]) == 0.0, "zero minimum FPR must give PE 0");
    let (d, y, g) = table(&[("a", 10, 2, 3)]);
    ensure!(predictive_equality(&d, &y, &g).is_err(), "a single group must be rejected");
    Ok(format!("10 unfair experts, min protected-reference FPR gap {min_gap:.4}; 4 hand tables"))
}

const REPORT_FILES: [&str; 4] = ["report.csv", "report.md", "results.csv", "runs.json"];

fn determinism(a: &RunFixture, b: &RunFixture) -> Outcome {
    for name in REPORT_FILES {
        let x = std::fs::read(out_dir(a).join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = std::fs::read(out_dir(b).join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure!(x == y, "{name} differs between runs");
    }
    Ok(format!("{} byte-identical at 8 and 1 workers", REPORT_FILES.join(", ")))
}

struct Line {
    id: usize,
    name: &'static str,
    limit: Duration,
    elapsed: Duration,
    outcome: Outcome,
}

fn timed(id: usize, name: &'static str, limit_s: u64, f: impl FnOnce() -> Outcome) -> Line {
    let start = Instant::now();
    let outcome = f();
    Line {
        id,
        name,
        limit: Duration::from_secs(limit_s),
        elapsed: start.elapsed(),
        outcome,
    }
}

fn main() {
    let mut lines = vec![timed(1, "score transform exactness", 1, score_transform)];

    let t0 = Instant::now();
    let fx = team_fixture();
    let fixture_time = t0.elapsed();
    let mut calib = timed(2, "expert calibration", 30, || expert_calibration(&fx));
    calib.elapsed += fixture_time;
    lines.push(calib);
    lines.push(timed(3, "Monte Carlo fidelity", 30, monte_carlo_fidelity));
    lines.push(timed(4, "assignment optimality oracle", 60, assignment_optimality));

    let t0 = Instant::now();
    let run = full_run(8);
    let run_time = t0.elapsed();
    let mut feas = timed(5, "capacity feasibility", 600, || capacity_feasibility(&run));
    feas.elapsed += run_time;
    lines.push(feas);
    lines.push(timed(6, "oracle dominance", 600, || oracle_dominance(&run)));
    lines.push(timed(7, "Elkan consistency", 10, elkan_consistency));
    lines.push(timed(8, "fairness machinery", 10, || fairness_machinery(&fx)));
    lines.push(timed(9, "end-to-end determinism", 1200, || {
        let again = full_run(1);
        determinism(&run, &again)
    }));

    let mut failed = 0;
    for line in &lines {
        let within = line.elapsed <= line.limit;
        let (status, detail) = match (&line.outcome, within) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; exceeded {} s limit", line.limit.as_secs())),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        failed += usize::from(status == "FAIL");
        println!(
            "{status} criterion {}: {} ({:.2} s) - {detail}",
            line.id,
            line.name,
            line.elapsed.as_secs_f64()
        );
    }
    println!("{} of {} acceptance criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
