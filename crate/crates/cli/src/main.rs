//! Command-line front end: training, Monte Carlo evaluation, episode
//! traces, standalone planning, and report aggregation.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use sloshdock::app::{
    self, Algo, PolicyChoice, RunConfig, DEFAULT_CHECKPOINT_EVERY,
};

#[derive(Parser)]
#[command(
    name = "sloshdock",
    about = "Spacecraft docking control lab: dynamics, MPC planning, RL agents, and evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Policy selection shared by evaluate and simulate.
#[derive(Args, Debug)]
struct PolicyArgs {
    /// Trained checkpoint to run.
    #[arg(long, conflicts_with_all = ["mpc_only", "oracle", "null"])]
    checkpoint: Option<PathBuf>,
    /// Receding-horizon planner as the controller.
    #[arg(long, conflicts_with_all = ["oracle", "null"])]
    mpc_only: bool,
    /// Scripted oracle replaying its episode-start plan.
    #[arg(long, conflicts_with = "null")]
    oracle: bool,
    /// Zero-action policy (pure drift).
    #[arg(long)]
    null: bool,
}

impl PolicyArgs {
    fn choice(&self) -> anyhow::Result<PolicyChoice> {
        match (&self.checkpoint, self.mpc_only, self.oracle, self.null) {
            (Some(path), false, false, false) => Ok(PolicyChoice::Checkpoint(path.clone())),
            (None, true, false, false) => Ok(PolicyChoice::MpcOnly),
            (None, false, true, false) => Ok(PolicyChoice::Oracle),
            (None, false, false, true) => Ok(PolicyChoice::Null),
            _ => bail!("select exactly one of --checkpoint, --mpc-only, --oracle, --null"),
        }
    }
}

fn parse_fill(fill: Option<f64>) -> anyhow::Result<Option<f64>> {
    match fill {
        None => Ok(None),
        Some(pct) if (0.0..=100.0).contains(&pct) => Ok(Some(pct / 100.0)),
        Some(pct) => bail!("--fill {pct} outside 0..=100 (percentage of tank capacity)"),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write the log, curve, and checkpoint.
    Train {
        /// Bundled preset name or scenario file path.
        #[arg(long, default_value = "planar_lab")]
        scenario: String,
        /// Algorithm: ppo | sac.
        #[arg(long, default_value = "ppo")]
        algo: String,
        /// Shape rewards with the planner reference.
        #[arg(long)]
        mpc: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Update batches to run (0 selects the desk-scale default).
        #[arg(long, default_value_t = 0)]
        budget: usize,
        /// Episodes per batch (defaults to the scenario file).
        #[arg(long)]
        batch_episodes: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Tank fill override, percent of capacity.
        #[arg(long)]
        fill: Option<f64>,
        /// Use the full-scale episode budget instead of the desk default.
        #[arg(long)]
        full_budget: bool,
        /// Resume from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Batches between periodic checkpoints.
        #[arg(long, default_value_t = DEFAULT_CHECKPOINT_EVERY)]
        checkpoint_every: usize,
    },
    /// Monte Carlo evaluation of a policy.
    Evaluate {
        #[arg(long, default_value = "planar_lab")]
        scenario: String,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        fill: Option<f64>,
    },
    /// Dump one episode trace at control-period resolution.
    Simulate {
        #[arg(long, default_value = "planar_lab")]
        scenario: String,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        fill: Option<f64>,
        /// Include the planner reference columns in the trace.
        #[arg(long)]
        mpc: bool,
    },
    /// Solve one nominal plan and write it as CSV.
    Plan {
        #[arg(long, default_value = "leo_docking")]
        scenario: String,
        /// Initial state `x,y,z` or `x,y,z,vx,vy,vz` (RSW meters, m/s).
        #[arg(long)]
        initial: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-aggregate per-run CSVs into a ranked method comparison.
    Report {
        /// Two or more report_runs_*.csv files.
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train {
            scenario,
            algo,
            mpc,
            seed,
            budget,
            batch_episodes,
            out,
            fill,
            full_budget,
            resume,
            checkpoint_every,
        } => {
            let cfg = RunConfig {
                scenario,
                algo: Algo::parse(&algo)?,
                mpc_shaping: mpc,
                seed,
                batches: budget,
                batch_episodes,
                out_dir: out,
                resume,
                fill: parse_fill(fill)?,
                full_budget,
                checkpoint_every: checkpoint_every.max(1),
            };
            let outcome = app::train(&cfg).context("training failed")?;
            println!(
                "trained {} batches; final mean return {:.3}",
                outcome.batches_run, outcome.mean_final_return
            );
            println!("checkpoint: {}", outcome.checkpoint.display());
            println!("log: {}", outcome.log_path.display());
            println!("curve: {}", outcome.curve_path.display());
        }
        Command::Evaluate {
            scenario,
            policy,
            runs,
            seed,
            out,
            fill,
        } => {
            if runs == 0 {
                bail!("--runs must be at least 1");
            }
            let choice = policy.choice()?;
            let outcome = app::evaluate(&scenario, &choice, runs, seed, &out, parse_fill(fill)?)
                .context("evaluation failed")?;
            app::print_report(&outcome.report, std::io::stdout().lock())?;
            println!("runs csv: {}", outcome.runs_csv.display());
            println!("summary: {}", outcome.summary_json.display());
        }
        Command::Simulate {
            scenario,
            policy,
            seed,
            out,
            fill,
            mpc,
        } => {
            let choice = policy.choice()?;
            let outcome = app::simulate(&scenario, &choice, seed, &out, parse_fill(fill)?, mpc)
                .context("simulation failed")?;
            println!(
                "episode: {} steps, termination {}",
                outcome.steps, outcome.termination
            );
            println!("trace: {}", outcome.trace_csv.display());
        }
        Command::Plan {
            scenario,
            initial,
            seed,
            out,
        } => {
            let state = app::parse_initial_state(&initial)?;
            let outcome = app::plan_cmd(&scenario, &state, seed, &out).context("planning failed")?;
            println!(
                "plan converged (kkt residual {:.3e}); state box {}",
                outcome.kkt_residual,
                if outcome.states_feasible {
                    "satisfied"
                } else {
                    "violated (soft constraints)"
                }
            );
            println!("plan: {}", outcome.plan_csv.display());
        }
        Command::Report { inputs, out } => {
            let (comparison, path) = app::report_cmd(&inputs, &out).context("report failed")?;
            println!("scenario {} ({} runs)", comparison.scenario, comparison.runs);
            for (i, method) in comparison.ranking.iter().enumerate() {
                println!("  #{} {}", i + 1, method);
            }
            for d in &comparison.deltas {
                println!(
                    "  {} vs {}: {} delta {:+.4} [{:+.4}, {:+.4}]",
                    d.method, comparison.baseline, d.metric, d.mean_delta, d.ci_low, d.ci_high
                );
            }
            println!("comparison: {}", path.display());
        }
    }
    Ok(())
}
