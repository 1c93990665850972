//! Seeded Monte Carlo evaluation and training-curve capture.
//!
//! Runs are independent episodes on split random streams, executed on a
//! worker pool and reduced in run order, so a report is a pure function
//! of (policy, scenario, run count, root seed). Method comparisons pair
//! runs by index (common random numbers) and attach bootstrap confidence
//! intervals to the per-metric deltas.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::ControlInput;
use crate::env::{reset, ScenarioConfig, TerminationCause};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::seeding::split_rng;
use std::sync::Arc;

/// Bootstrap resamples behind each confidence interval.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Outcome of a single evaluation episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: usize,
    pub success: bool,
    pub steps: usize,
    pub termination: String,
    /// Final position error to the goal, m.
    pub pos_error: f64,
    /// Final attitude error to the goal, degrees.
    pub att_error_deg: f64,
    /// Integrated thrust magnitude, N s.
    pub control_effort: f64,
    /// Integrated torque magnitude, N m s (auxiliary).
    pub torque_effort: f64,
    /// Episode return under the standalone reward.
    pub standalone_return: f64,
}

/// Mean and sample standard deviation of one metric.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(values: impl Iterator<Item = f64> + Clone) -> Aggregate {
    let n = values.clone().count();
    if n == 0 {
        return Aggregate { mean: 0.0, std: 0.0 };
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Aggregate { mean, std }
}

/// Monte Carlo evaluation report for one control method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub runs: usize,
    pub root_seed: u64,
    pub success_ratio: f64,
    pub pos_error: Aggregate,
    pub att_error_deg: Aggregate,
    pub control_effort: Aggregate,
    pub torque_effort: Aggregate,
    pub per_run: Vec<RunRecord>,
}

impl MetricsReport {
    pub fn from_records(
        method: &str,
        scenario: &str,
        scenario_hash: &str,
        root_seed: u64,
        per_run: Vec<RunRecord>,
    ) -> Self {
        let runs = per_run.len();
        let successes = per_run.iter().filter(|r| r.success).count();
        Self {
            method: method.into(),
            scenario: scenario.into(),
            scenario_hash: scenario_hash.into(),
            runs,
            root_seed,
            success_ratio: successes as f64 / runs.max(1) as f64,
            pos_error: aggregate(per_run.iter().map(|r| r.pos_error)),
            att_error_deg: aggregate(per_run.iter().map(|r| r.att_error_deg)),
            control_effort: aggregate(per_run.iter().map(|r| r.control_effort)),
            torque_effort: aggregate(per_run.iter().map(|r| r.torque_effort)),
            per_run,
        }
    }
}

/// Integrated thrust magnitude under zero-order hold, N s.
pub fn control_effort(controls: &[ControlInput], dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParam("dt must be positive".into()));
    }
    Ok(controls.iter().map(|u| u.force.norm() * dt).sum())
}

/// Integrated torque magnitude, N m s.
pub fn torque_effort(controls: &[ControlInput], dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParam("dt must be positive".into()));
    }
    Ok(controls.iter().map(|u| u.torque.norm() * dt).sum())
}

/// Runs one evaluation episode on the given stream index.
fn run_episode(
    policy: &Policy,
    scenario: &Arc<ScenarioConfig>,
    root_seed: u64,
    run_index: usize,
) -> Result<RunRecord> {
    let rng = split_rng(root_seed, run_index as u64);
    let mut ctx = reset(scenario.clone(), false, true, rng)?;
    let mut policy = policy.clone();
    policy.begin_episode(&ctx)?;
    let mut controls = Vec::with_capacity(ctx.max_steps);
    let mut standalone_return = 0.0;
    let mut cause = TerminationCause::TimeLimit;
    while !ctx.is_done() {
        let action = policy.act(&ctx)?;
        let tr = crate::env::step(&mut ctx, &action)?;
        controls.push(tr.action_wrench);
        standalone_return += tr.info.standalone_reward;
        if let Some(c) = tr.cause {
            cause = c;
        }
    }
    let goal = &ctx.scenario.goal;
    Ok(RunRecord {
        run_index,
        success: cause == TerminationCause::Stabilized,
        steps: ctx.step_count,
        termination: cause.as_str().into(),
        pos_error: ctx.state.position_error_to(goal),
        att_error_deg: ctx.state.attitude_angle_to(goal).to_degrees(),
        control_effort: control_effort(&controls, ctx.scenario.control_period)?,
        torque_effort: torque_effort(&controls, ctx.scenario.control_period)?,
        standalone_return,
    })
}

/// Independent evaluation episodes on split seeds, reduced in run order.
pub fn run_monte_carlo(
    policy: &Policy,
    scenario: &Arc<ScenarioConfig>,
    scenario_hash: &str,
    method: &str,
    n_runs: usize,
    root_seed: u64,
) -> Result<MetricsReport> {
    if n_runs == 0 {
        return Err(Error::InvalidParam("n_runs must be at least 1".into()));
    }
    let records: Result<Vec<RunRecord>> = (0..n_runs)
        .into_par_iter()
        .map(|i| run_episode(policy, scenario, root_seed, i))
        .collect();
    Ok(MetricsReport::from_records(
        method,
        &scenario.name,
        scenario_hash,
        root_seed,
        records?,
    ))
}

/// One point of a training curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub batch: usize,
    pub mean_return: f64,
    pub normalized: f64,
}

/// Batch returns with min-max normalization over the observed range
/// (a degenerate range maps to zero).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

pub fn record_training_curve(batch_returns: &[f64]) -> TrainingCurve {
    let lo = batch_returns.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = batch_returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    TrainingCurve {
        points: batch_returns
            .iter()
            .enumerate()
            .map(|(i, &r)| CurvePoint {
                batch: i,
                mean_return: r,
                normalized: if range > 0.0 { (r - lo) / range } else { 0.0 },
            })
            .collect(),
    }
}

/// Bootstrap confidence interval on the mean of paired deltas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeltaRow {
    pub method: String,
    pub metric: String,
    pub mean_delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Ranked method comparison with per-metric deltas against the leader.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodComparison {
    pub scenario: String,
    pub runs: usize,
    pub root_seed: u64,
    /// Method names ordered best first (success ratio, then position
    /// error).
    pub ranking: Vec<String>,
    pub baseline: String,
    pub deltas: Vec<DeltaRow>,
}

fn bootstrap_ci(deltas: &[f64], rng_seed: u64) -> (f64, f64, f64) {
    let n = deltas.len();
    let mean = deltas.iter().sum::<f64>() / n as f64;
    let mut rng = split_rng(rng_seed, u64::MAX);
    let mut means = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += deltas[rand::Rng::gen_range(&mut rng, 0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(f64::total_cmp);
    let low = means[(0.025 * (BOOTSTRAP_RESAMPLES - 1) as f64).round() as usize];
    let high = means[(0.975 * (BOOTSTRAP_RESAMPLES - 1) as f64).round() as usize];
    (mean, low, high)
}

/// Pairs reports run-by-run (common random numbers) and ranks the
/// methods. All reports must share the scenario, run count, and root
/// seed.
pub fn compare_methods(reports: &[MetricsReport]) -> Result<MethodComparison> {
    if reports.len() < 2 {
        return Err(Error::InvalidParam("comparison needs at least two reports".into()));
    }
    let first = &reports[0];
    for r in reports.iter().skip(1) {
        if r.scenario_hash != first.scenario_hash
            || r.runs != first.runs
            || r.root_seed != first.root_seed
        {
            return Err(Error::InvalidParam(
                "reports disagree on scenario, runs, or root seed".into(),
            ));
        }
    }

    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| {
        reports[b]
            .success_ratio
            .total_cmp(&reports[a].success_ratio)
            .then(reports[a].pos_error.mean.total_cmp(&reports[b].pos_error.mean))
            .then(reports[a].method.cmp(&reports[b].method))
    });
    let ranking: Vec<String> = order.iter().map(|&i| reports[i].method.clone()).collect();
    let baseline = &reports[order[0]];

    let metric = |r: &RunRecord, name: &str| -> f64 {
        match name {
            "success" => r.success as u8 as f64,
            "pos_error" => r.pos_error,
            "att_error_deg" => r.att_error_deg,
            "control_effort" => r.control_effort,
            _ => unreachable!(),
        }
    };

    let mut deltas = Vec::new();
    for &idx in &order[1..] {
        let report = &reports[idx];
        for name in ["success", "pos_error", "att_error_deg", "control_effort"] {
            let paired: Vec<f64> = report
                .per_run
                .iter()
                .zip(baseline.per_run.iter())
                .map(|(a, b)| metric(a, name) - metric(b, name))
                .collect();
            let (mean_delta, ci_low, ci_high) = bootstrap_ci(&paired, first.root_seed);
            deltas.push(DeltaRow {
                method: report.method.clone(),
                metric: name.into(),
                mean_delta,
                ci_low,
                ci_high,
            });
        }
    }

    Ok(MethodComparison {
        scenario: first.scenario.clone(),
        runs: first.runs,
        root_seed: first.root_seed,
        ranking,
        baseline: baseline.method.clone(),
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn effort_arithmetic() {
        let controls: Vec<ControlInput> = (0..10)
            .map(|_| ControlInput {
                force: Vector3::new(10.0, 0.0, 0.0),
                torque: Vector3::zeros(),
            })
            .collect();
        assert_eq!(control_effort(&controls, 1.0).unwrap(), 100.0);
        assert_eq!(control_effort(&[], 1.0).unwrap(), 0.0);
        // Piecewise profile against a direct sum.
        let mags = [1.0, 3.0, 0.5, 2.5];
        let controls: Vec<ControlInput> = mags
            .iter()
            .map(|&m| ControlInput {
                force: Vector3::new(0.0, m, 0.0),
                torque: Vector3::zeros(),
            })
            .collect();
        let direct: f64 = mags.iter().map(|m| m * 0.25).sum();
        assert!((control_effort(&controls, 0.25).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn curve_normalization() {
        let curve = record_training_curve(&[0.0, 5.0, 10.0]);
        let normalized: Vec<f64> = curve.points.iter().map(|p| p.normalized).collect();
        assert_eq!(normalized, vec![0.0, 0.5, 1.0]);
        // Degenerate range maps to zero.
        let flat = record_training_curve(&[3.0, 3.0, 3.0]);
        assert!(flat.points.iter().all(|p| p.normalized == 0.0));
        // Monotone stays monotone.
        let mono = record_training_curve(&[1.0, 2.0, 2.5, 4.0]);
        for w in mono.points.windows(2) {
            assert!(w[1].normalized >= w[0].normalized);
        }
    }

    fn fake_report(method: &str, successes: &[bool], pos: &[f64]) -> MetricsReport {
        let per_run: Vec<RunRecord> = successes
            .iter()
            .zip(pos.iter())
            .enumerate()
            .map(|(i, (&s, &p))| RunRecord {
                run_index: i,
                success: s,
                steps: 10,
                termination: if s { "stabilized" } else { "time-limit" }.into(),
                pos_error: p,
                att_error_deg: 1.0,
                control_effort: 10.0,
                torque_effort: 1.0,
                standalone_return: 0.0,
            })
            .collect();
        MetricsReport::from_records(method, "test", "hash", 7, per_run)
    }

    #[test]
    fn ratio_arithmetic() {
        let report = fake_report("x", &[true; 96].iter().chain([false; 4].iter()).copied().collect::<Vec<_>>(), &[0.01; 100]);
        assert!((report.success_ratio - 0.96).abs() < 1e-12);
        let count_back = report.success_ratio * report.runs as f64;
        assert!((count_back - count_back.round()).abs() < 1e-9);
    }

    #[test]
    fn aggregates_match_two_pass() {
        let report = fake_report("x", &[true, false, true], &[0.5, 1.5, 2.5]);
        let mean = (0.5 + 1.5 + 2.5) / 3.0;
        let var = ((0.5f64 - mean).powi(2) + (1.5 - mean).powi(2) + (2.5 - mean).powi(2)) / 2.0;
        assert!((report.pos_error.mean - mean).abs() < 1e-12);
        assert!((report.pos_error.std - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn comparison_ranks_and_separates() {
        let good = fake_report("good", &[true; 20], &[0.01; 20]);
        let bad = fake_report("bad", &[false; 20], &[5.0; 20]);
        let cmp = compare_methods(&[bad.clone(), good.clone()]).unwrap();
        assert_eq!(cmp.ranking, vec!["good".to_string(), "bad".to_string()]);
        assert_eq!(cmp.baseline, "good");
        let success_delta = cmp
            .deltas
            .iter()
            .find(|d| d.metric == "success" && d.method == "bad")
            .unwrap();
        assert!((success_delta.mean_delta + 1.0).abs() < 1e-12);
        // Interval excludes zero for a clean separation.
        assert!(success_delta.ci_high < 0.0);

        // Identical reports: zero deltas, intervals overlapping zero.
        let twin = fake_report("good2", &[true; 20], &[0.01; 20]);
        let cmp2 = compare_methods(&[good, twin]).unwrap();
        for d in &cmp2.deltas {
            assert_eq!(d.mean_delta, 0.0);
            assert!(d.ci_low <= 0.0 && d.ci_high >= 0.0);
        }
    }

    #[test]
    fn comparison_rejects_mismatched_reports() {
        let a = fake_report("a", &[true; 5], &[0.1; 5]);
        let mut b = fake_report("b", &[true; 5], &[0.1; 5]);
        b.root_seed = 8;
        assert!(compare_methods(&[a, b]).is_err());
    }
}
