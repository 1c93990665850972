//! Operator-facing command cores: training with periodic resumable
//! checkpoints, Monte Carlo evaluation, single-episode traces, standalone
//! planning, and report re-aggregation.
//!
//! Every command is a pure function of (config, seed): outputs carry the
//! scenario hash and seed in a header line and are byte-identical across
//! reruns.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dynamics::StateVector;
use crate::env::{self, reset, step, ControlMode, ScenarioConfig, Transition};
use crate::error::{Error, Result};
use crate::eval::{
    compare_methods, record_training_curve, run_monte_carlo, MethodComparison, MetricsReport,
    RunRecord,
};
use crate::nn::{
    load_adam, load_mlp, load_normalizer, sample_diag_gaussian, sample_squashed_gaussian,
    store_adam, store_mlp, store_normalizer, Checkpoint, RunningNormalizer,
};
use crate::policy::Policy;
use crate::ppo::{ppo_update, PpoNets, PpoOptimizers, RolloutBuffer, RolloutEpisode, RolloutStep};
use crate::sac::{sac_update_step, ReplayBuffer, ReplayTransition, SacNets, SacOptimizers};
use crate::seeding::split_rng;

pub const DEFAULT_CHECKPOINT_EVERY: usize = 50;
/// Episode budgets behind the full-budget flag.
pub const FULL_BUDGET_EPISODES_PLANAR: usize = 20_000;
pub const FULL_BUDGET_EPISODES_DOCKING: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    Ppo,
    Sac,
}

impl Algo {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::Ppo => "ppo",
            Algo::Sac => "sac",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Algo::Ppo),
            "sac" => Ok(Algo::Sac),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Policy selector for evaluation and simulation.
#[derive(Debug, Clone)]
pub enum PolicyChoice {
    Checkpoint(PathBuf),
    MpcOnly,
    Oracle,
    Null,
}

/// Run settings assembled by the command line.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Preset name or scenario file path.
    pub scenario: String,
    pub algo: Algo,
    pub mpc_shaping: bool,
    pub seed: u64,
    /// Update batches to run; zero selects the desk-scale default.
    pub batches: usize,
    /// Episodes per batch; `None` honors the scenario file.
    pub batch_episodes: Option<usize>,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
    /// Tank fill fraction override in [0, 1].
    pub fill: Option<f64>,
    pub full_budget: bool,
    pub checkpoint_every: usize,
}

/// First 16 hex digits of the scenario text digest.
pub fn config_hash(scenario_text: &str) -> String {
    let digest = Sha256::digest(scenario_text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// 17-significant-digit float formatting for exact CSV round-trips.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn resolve_scenario(name: &str, fill: Option<f64>) -> Result<(Arc<ScenarioConfig>, String, String)> {
    let (mut scenario, text) = ScenarioConfig::resolve(name)?;
    if let Some(fill) = fill {
        scenario.apply_fill(fill)?;
    }
    let hash = {
        // The fill override participates in the hash: it changes the
        // effective configuration.
        let mut text_for_hash = text.clone();
        if let Some(fill) = fill {
            text_for_hash.push_str(&format!("\n# fill-override {fill}\n"));
        }
        config_hash(&text_for_hash)
    };
    Ok((Arc::new(scenario), text, hash))
}

fn header_line(hash: &str, seed: u64, extra: &str) -> String {
    if extra.is_empty() {
        format!("# config_hash={hash} seed={seed}\n")
    } else {
        format!("# config_hash={hash} seed={seed} {extra}\n")
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

// ---------------------------------------------------------------------
// RNG checkpointing
// ---------------------------------------------------------------------

fn store_rng(ck: &mut Checkpoint, prefix: &str, rng: &ChaCha8Rng) {
    let seed = rng.get_seed();
    let words: Vec<u64> = seed
        .chunks(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ck.insert_u64(&format!("{prefix}/seed"), words);
    let pos = rng.get_word_pos();
    ck.insert_u64(
        &format!("{prefix}/word_pos"),
        vec![(pos & u128::from(u64::MAX)) as u64, (pos >> 64) as u64],
    );
    ck.insert_u64(&format!("{prefix}/stream"), vec![rng.get_stream()]);
}

fn load_rng(ck: &Checkpoint, prefix: &str) -> Result<ChaCha8Rng> {
    let words = ck.u64_section(&format!("{prefix}/seed"))?;
    if words.len() != 4 {
        return Err(Error::Checkpoint("rng seed must hold 4 words".into()));
    }
    let mut seed = [0u8; 32];
    for (chunk, w) in seed.chunks_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    let pos = ck.u64_section(&format!("{prefix}/word_pos"))?;
    if pos.len() != 2 {
        return Err(Error::Checkpoint("rng position must hold 2 words".into()));
    }
    rng.set_stream(ck.scalar_u64(&format!("{prefix}/stream"))?);
    rng.set_word_pos(u128::from(pos[0]) | (u128::from(pos[1]) << 64));
    Ok(rng)
}

// ---------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
struct BatchLog {
    batch: usize,
    episodes: usize,
    env_steps: usize,
    mean_return: f64,
    mean_standalone_return: f64,
    // Algorithm-specific diagnostic columns.
    diag: Vec<f64>,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub batches_run: usize,
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub curve_path: PathBuf,
    pub mean_final_return: f64,
}

fn default_batches(mode: ControlMode) -> usize {
    match mode {
        ControlMode::Planar => 200,
        ControlMode::Docking => 500,
    }
}

fn effective_budget(cfg: &RunConfig, scenario: &ScenarioConfig) -> (usize, usize) {
    let batch_episodes = cfg
        .batch_episodes
        .unwrap_or(scenario.ppo.batch_episodes)
        .max(1);
    let batches = if cfg.full_budget {
        let target = match scenario.mode {
            ControlMode::Planar => FULL_BUDGET_EPISODES_PLANAR,
            ControlMode::Docking => FULL_BUDGET_EPISODES_DOCKING,
        };
        target.div_ceil(batch_episodes)
    } else if cfg.batches > 0 {
        cfg.batches
    } else {
        default_batches(scenario.mode)
    };
    (batches, batch_episodes)
}

/// Collects one on-policy episode, updating the observation normalizer as
/// states stream in.
fn collect_ppo_episode(
    scenario: &Arc<ScenarioConfig>,
    shaping: bool,
    nets: &PpoNets,
    normalizer: &mut RunningNormalizer,
    rng: &mut ChaCha8Rng,
) -> Result<(RolloutEpisode, f64, f64)> {
    let episode_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut ctx = reset(scenario.clone(), shaping, false, episode_rng)?;
    let std = nets.std();
    let mut episode = RolloutEpisode {
        steps: Vec::with_capacity(ctx.max_steps),
        complete: false,
    };
    let mut total_reward = 0.0;
    let mut total_standalone = 0.0;
    while !ctx.is_done() {
        let raw_obs = ctx.observe();
        normalizer.update(&raw_obs)?;
        let obs = normalizer.normalize(&raw_obs)?;
        let mean = nets.actor.infer(&obs)?;
        let (action, log_prob) = sample_diag_gaussian(&mean, &std, rng)?;
        let tr = step(&mut ctx, &action)?;
        total_reward += tr.reward;
        total_standalone += tr.info.standalone_reward;
        episode.steps.push(RolloutStep {
            obs,
            action,
            reward: tr.reward,
            log_prob,
            standalone_reward: tr.info.standalone_reward,
        });
    }
    episode.complete = true;
    Ok((episode, total_reward, total_standalone))
}

struct PpoTrainState {
    nets: PpoNets,
    opts: PpoOptimizers,
    normalizer: RunningNormalizer,
    rng: ChaCha8Rng,
    batch_index: usize,
    episodes_done: usize,
    env_steps: usize,
}

struct SacTrainState {
    nets: SacNets,
    opts: SacOptimizers,
    normalizer: RunningNormalizer,
    replay: ReplayBuffer,
    rng: ChaCha8Rng,
    batch_index: usize,
    episodes_done: usize,
    env_steps: usize,
}

fn ppo_checkpoint(
    state: &PpoTrainState,
    scenario: &ScenarioConfig,
    hash: &str,
    shaping: bool,
) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.insert_text("meta/format", "train-checkpoint-v1");
    ck.insert_text("meta/algo", "ppo");
    ck.insert_text("meta/scenario", &scenario.name);
    ck.insert_text("meta/config_hash", hash);
    ck.insert_u64("meta/mpc_shaping", vec![shaping as u64]);
    ck.insert_u64(
        "progress",
        vec![
            state.batch_index as u64,
            state.episodes_done as u64,
            state.env_steps as u64,
        ],
    );
    store_rng(&mut ck, "rng", &state.rng);
    store_normalizer(&mut ck, "normalizer", &state.normalizer);
    store_mlp(&mut ck, "actor", &state.nets.actor);
    store_mlp(&mut ck, "critic", &state.nets.critic);
    ck.insert_f64(
        "log_std",
        vec![state.nets.log_std.len()],
        state.nets.log_std.as_slice().to_vec(),
    );
    store_adam(&mut ck, "opt_actor", &state.opts.actor);
    store_adam(&mut ck, "opt_critic", &state.opts.critic);
    ck.insert_u64("opt_log_std/step", vec![state.opts.log_std.step]);
    ck.insert_f64("opt_log_std/lr", vec![1], vec![state.opts.log_std.lr]);
    ck.insert_f64(
        "opt_log_std/m",
        vec![state.opts.log_std.m.len()],
        state.opts.log_std.m.as_slice().to_vec(),
    );
    ck.insert_f64(
        "opt_log_std/v",
        vec![state.opts.log_std.v.len()],
        state.opts.log_std.v.as_slice().to_vec(),
    );
    ck
}

fn sac_checkpoint(
    state: &SacTrainState,
    scenario: &ScenarioConfig,
    hash: &str,
    shaping: bool,
) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.insert_text("meta/format", "train-checkpoint-v1");
    ck.insert_text("meta/algo", "sac");
    ck.insert_text("meta/scenario", &scenario.name);
    ck.insert_text("meta/config_hash", hash);
    ck.insert_u64("meta/mpc_shaping", vec![shaping as u64]);
    ck.insert_u64(
        "progress",
        vec![
            state.batch_index as u64,
            state.episodes_done as u64,
            state.env_steps as u64,
        ],
    );
    store_rng(&mut ck, "rng", &state.rng);
    store_normalizer(&mut ck, "normalizer", &state.normalizer);
    store_mlp(&mut ck, "actor", &state.nets.actor);
    for c in 0..2 {
        store_mlp(&mut ck, &format!("critic{c}"), &state.nets.critics[c]);
        store_mlp(&mut ck, &format!("target{c}"), &state.nets.targets[c]);
        store_adam(&mut ck, &format!("opt_critic{c}"), &state.opts.critics[c]);
    }
    store_adam(&mut ck, "opt_actor", &state.opts.actor);

    // Replay ring, flattened.
    let n = state.replay.len();
    let obs_dim = state.nets.obs_dim();
    let act_dim = state.nets.act_dim();
    let mut obs = Vec::with_capacity(n * obs_dim);
    let mut actions = Vec::with_capacity(n * act_dim);
    let mut rewards = Vec::with_capacity(n);
    let mut next_obs = Vec::with_capacity(n * obs_dim);
    let mut done = Vec::with_capacity(n);
    for t in state.replay.iter() {
        obs.extend_from_slice(&t.obs);
        actions.extend_from_slice(&t.action);
        rewards.push(t.reward);
        next_obs.extend_from_slice(&t.next_obs);
        done.push(t.done as u64);
    }
    ck.insert_f64("replay/obs", vec![n, obs_dim], obs);
    ck.insert_f64("replay/actions", vec![n, act_dim], actions);
    ck.insert_f64("replay/rewards", vec![n], rewards);
    ck.insert_f64("replay/next_obs", vec![n, obs_dim], next_obs);
    ck.insert_u64("replay/done", done);
    ck.insert_u64(
        "replay/ring",
        vec![state.replay.capacity() as u64, state.replay.ring_next() as u64],
    );
    ck
}

fn load_ppo_state(ck: &Checkpoint, scenario: &ScenarioConfig) -> Result<PpoTrainState> {
    let progress = ck.u64_section("progress")?;
    let nets = PpoNets {
        actor: load_mlp(ck, "actor")?,
        critic: load_mlp(ck, "critic")?,
        log_std: {
            let (_, data) = ck.f64_section("log_std")?;
            DVector::from_column_slice(data)
        },
    };
    let mut opts = PpoOptimizers::new(&nets, &scenario.ppo);
    opts.actor = load_adam(ck, "opt_actor", &nets.actor)?;
    opts.critic = load_adam(ck, "opt_critic", &nets.critic)?;
    opts.log_std.step = ck.scalar_u64("opt_log_std/step")?;
    opts.log_std.lr = ck.f64_section("opt_log_std/lr")?.1[0];
    opts.log_std.m = DVector::from_column_slice(ck.f64_section("opt_log_std/m")?.1);
    opts.log_std.v = DVector::from_column_slice(ck.f64_section("opt_log_std/v")?.1);
    Ok(PpoTrainState {
        nets,
        opts,
        normalizer: load_normalizer(ck, "normalizer")?,
        rng: load_rng(ck, "rng")?,
        batch_index: progress[0] as usize,
        episodes_done: progress[1] as usize,
        env_steps: progress[2] as usize,
    })
}

fn load_sac_state(ck: &Checkpoint, scenario: &ScenarioConfig) -> Result<SacTrainState> {
    let progress = ck.u64_section("progress")?;
    let nets = SacNets {
        actor: load_mlp(ck, "actor")?,
        critics: [load_mlp(ck, "critic0")?, load_mlp(ck, "critic1")?],
        targets: [load_mlp(ck, "target0")?, load_mlp(ck, "target1")?],
    };
    let mut opts = SacOptimizers::new(&nets, &scenario.sac);
    opts.actor = load_adam(ck, "opt_actor", &nets.actor)?;
    opts.critics = [
        load_adam(ck, "opt_critic0", &nets.critics[0])?,
        load_adam(ck, "opt_critic1", &nets.critics[1])?,
    ];

    let ring = ck.u64_section("replay/ring")?;
    let mut replay = ReplayBuffer::new(ring[0] as usize);
    let (obs_shape, obs) = ck.f64_section("replay/obs")?;
    let (_, actions) = ck.f64_section("replay/actions")?;
    let (_, rewards) = ck.f64_section("replay/rewards")?;
    let (_, next_obs) = ck.f64_section("replay/next_obs")?;
    let done = ck.u64_section("replay/done")?;
    let (n, obs_dim) = (obs_shape[0], obs_shape[1]);
    let act_dim = nets.act_dim();
    for i in 0..n {
        replay.push(ReplayTransition {
            obs: obs[i * obs_dim..(i + 1) * obs_dim].to_vec(),
            action: actions[i * act_dim..(i + 1) * act_dim].to_vec(),
            reward: rewards[i],
            next_obs: next_obs[i * obs_dim..(i + 1) * obs_dim].to_vec(),
            done: done[i] != 0,
        });
    }
    replay.set_ring_next(ring[1] as usize);
    Ok(SacTrainState {
        nets,
        opts,
        normalizer: load_normalizer(ck, "normalizer")?,
        replay,
        rng: load_rng(ck, "rng")?,
        batch_index: progress[0] as usize,
        episodes_done: progress[1] as usize,
        env_steps: progress[2] as usize,
    })
}

fn write_training_outputs(
    cfg: &RunConfig,
    hash: &str,
    logs: &[BatchLog],
    diag_header: &str,
) -> Result<(PathBuf, PathBuf)> {
    let log_path = cfg.out_dir.join("training_log.csv");
    let mut out = String::new();
    out.push_str(&header_line(
        hash,
        cfg.seed,
        &format!("algo={} mpc={}", cfg.algo.as_str(), cfg.mpc_shaping),
    ));
    out.push_str(&format!(
        "batch,episodes,env_steps,mean_return,mean_standalone_return,{diag_header}\n"
    ));
    for log in logs {
        let diag: Vec<String> = log.diag.iter().map(|d| fmt_f64(*d)).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            log.batch,
            log.episodes,
            log.env_steps,
            fmt_f64(log.mean_return),
            fmt_f64(log.mean_standalone_return),
            diag.join(",")
        ));
    }
    std::fs::write(&log_path, out)?;

    let curve_path = cfg.out_dir.join("training_curve.csv");
    let standalone: Vec<f64> = logs.iter().map(|l| l.mean_standalone_return).collect();
    let curve = record_training_curve(&standalone);
    let mut out = String::new();
    out.push_str(&header_line(
        hash,
        cfg.seed,
        &format!("algo={} mpc={}", cfg.algo.as_str(), cfg.mpc_shaping),
    ));
    out.push_str("batch,mean_standalone_return,normalized\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{},{},{}\n",
            p.batch,
            fmt_f64(p.mean_return),
            fmt_f64(p.normalized)
        ));
    }
    std::fs::write(&curve_path, out)?;
    Ok((log_path, curve_path))
}

/// Trains the selected agent, writing the log, curve, and checkpoints.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let (scenario, _text, hash) = resolve_scenario(&cfg.scenario, cfg.fill)?;
    create_out_dir(&cfg.out_dir)?;
    let (batches, batch_episodes) = effective_budget(cfg, &scenario);

    match cfg.algo {
        Algo::Ppo => train_ppo(cfg, scenario, &hash, batches, batch_episodes),
        Algo::Sac => train_sac(cfg, scenario, &hash, batches, batch_episodes),
    }
}

fn verify_resume_meta(ck: &Checkpoint, cfg: &RunConfig, hash: &str) -> Result<()> {
    if ck.text_section("meta/algo")? != cfg.algo.as_str() {
        return Err(Error::Checkpoint("checkpoint algorithm mismatch".into()));
    }
    if ck.text_section("meta/config_hash")? != hash {
        return Err(Error::Checkpoint(
            "checkpoint was trained under a different configuration".into(),
        ));
    }
    if (ck.scalar_u64("meta/mpc_shaping")? != 0) != cfg.mpc_shaping {
        return Err(Error::Checkpoint("checkpoint shaping flag mismatch".into()));
    }
    Ok(())
}

fn train_ppo(
    cfg: &RunConfig,
    scenario: Arc<ScenarioConfig>,
    hash: &str,
    batches: usize,
    batch_episodes: usize,
) -> Result<TrainOutcome> {
    let mut ppo_config = scenario.ppo.clone();
    ppo_config.batch_episodes = batch_episodes;

    let mut state = if let Some(resume) = &cfg.resume {
        let ck = Checkpoint::load(resume)?;
        verify_resume_meta(&ck, cfg, hash)?;
        load_ppo_state(&ck, &scenario)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let nets = PpoNets::new(scenario.mode.obs_dim(), scenario.mode.act_dim(), &mut rng)?;
        let opts = PpoOptimizers::new(&nets, &ppo_config);
        PpoTrainState {
            normalizer: RunningNormalizer::new(scenario.mode.obs_dim()),
            nets,
            opts,
            rng,
            batch_index: 0,
            episodes_done: 0,
            env_steps: 0,
        }
    };

    let mut logs: Vec<BatchLog> = read_existing_log(&cfg.out_dir, state.batch_index)?;
    let checkpoint_path = cfg.out_dir.join("checkpoint_final.ckpt");

    while state.batch_index < batches {
        let mut buffer = RolloutBuffer::default();
        let mut returns = 0.0;
        let mut standalone = 0.0;
        for _ in 0..batch_episodes {
            let (episode, ep_return, ep_standalone) = collect_ppo_episode(
                &scenario,
                cfg.mpc_shaping,
                &state.nets,
                &mut state.normalizer,
                &mut state.rng,
            )?;
            state.env_steps += episode.steps.len();
            state.episodes_done += 1;
            returns += ep_return;
            standalone += ep_standalone;
            buffer.episodes.push(episode);
        }
        let diag = ppo_update(
            &buffer,
            &mut state.nets,
            &mut state.opts,
            &ppo_config,
            &mut state.rng,
        )?;
        state.batch_index += 1;
        logs.push(BatchLog {
            batch: state.batch_index,
            episodes: state.episodes_done,
            env_steps: state.env_steps,
            mean_return: returns / batch_episodes as f64,
            mean_standalone_return: standalone / batch_episodes as f64,
            diag: vec![
                diag.mean_kl,
                diag.clip_fraction,
                diag.value_loss,
                diag.epochs_run as f64,
                diag.halted_early as u8 as f64,
            ],
        });

        if state.batch_index % cfg.checkpoint_every == 0 || state.batch_index == batches {
            let ck = ppo_checkpoint(&state, &scenario, hash, cfg.mpc_shaping);
            ck.save(&checkpoint_path)?;
        }
    }

    let (log_path, curve_path) = write_training_outputs(
        cfg,
        hash,
        &logs,
        "mean_kl,clip_fraction,value_loss,epochs_run,halted_early",
    )?;
    let ck = ppo_checkpoint(&state, &scenario, hash, cfg.mpc_shaping);
    ck.save(&checkpoint_path)?;
    Ok(TrainOutcome {
        batches_run: state.batch_index,
        checkpoint: checkpoint_path,
        log_path,
        curve_path,
        mean_final_return: logs.last().map(|l| l.mean_standalone_return).unwrap_or(0.0),
    })
}

fn train_sac(
    cfg: &RunConfig,
    scenario: Arc<ScenarioConfig>,
    hash: &str,
    batches: usize,
    batch_episodes: usize,
) -> Result<TrainOutcome> {
    let sac_config = scenario.sac.clone();

    let mut state = if let Some(resume) = &cfg.resume {
        let ck = Checkpoint::load(resume)?;
        verify_resume_meta(&ck, cfg, hash)?;
        load_sac_state(&ck, &scenario)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let nets = SacNets::new(scenario.mode.obs_dim(), scenario.mode.act_dim(), &mut rng)?;
        let opts = SacOptimizers::new(&nets, &sac_config);
        SacTrainState {
            normalizer: RunningNormalizer::new(scenario.mode.obs_dim()),
            replay: ReplayBuffer::new(sac_config.buffer_capacity),
            nets,
            opts,
            rng,
            batch_index: 0,
            episodes_done: 0,
            env_steps: 0,
        }
    };

    let mut logs: Vec<BatchLog> = read_existing_log(&cfg.out_dir, state.batch_index)?;
    let checkpoint_path = cfg.out_dir.join("checkpoint_final.ckpt");

    while state.batch_index < batches {
        let mut returns = 0.0;
        let mut standalone = 0.0;
        let mut diag_accum = [0.0f64; 4];
        let mut updates = 0usize;
        for _ in 0..batch_episodes {
            let episode_rng = ChaCha8Rng::seed_from_u64(state.rng.gen());
            let mut ctx = reset(scenario.clone(), cfg.mpc_shaping, false, episode_rng)?;
            while !ctx.is_done() {
                let raw_obs = ctx.observe();
                state.normalizer.update(&raw_obs)?;
                let obs = state.normalizer.normalize(&raw_obs)?;
                let (mean, std) = state.nets.policy(&obs)?;
                let sample = sample_squashed_gaussian(&mean, &std, &mut state.rng)?;
                let tr = step(&mut ctx, &sample.action)?;
                returns += tr.reward;
                standalone += tr.info.standalone_reward;
                state.env_steps += 1;
                state.replay.push(ReplayTransition {
                    obs: raw_obs.as_slice().to_vec(),
                    action: sample.action.as_slice().to_vec(),
                    reward: tr.reward,
                    next_obs: env::observe_state(&tr.next_state, scenario.mode)
                        .as_slice()
                        .to_vec(),
                    done: tr.done,
                });
                if state.env_steps > sac_config.warmup_steps
                    && state.env_steps % sac_config.update_every == 0
                    && state.replay.len() >= sac_config.batch_size
                {
                    let diag = sac_update_step(
                        &state.replay,
                        &mut state.nets,
                        &mut state.opts,
                        &state.normalizer,
                        &sac_config,
                        &mut state.rng,
                    )?;
                    diag_accum[0] += diag.critic_loss[0];
                    diag_accum[1] += diag.critic_loss[1];
                    diag_accum[2] += diag.actor_objective;
                    diag_accum[3] += diag.mean_entropy;
                    updates += 1;
                }
            }
            state.episodes_done += 1;
        }
        state.batch_index += 1;
        let scale = 1.0 / updates.max(1) as f64;
        logs.push(BatchLog {
            batch: state.batch_index,
            episodes: state.episodes_done,
            env_steps: state.env_steps,
            mean_return: returns / batch_episodes as f64,
            mean_standalone_return: standalone / batch_episodes as f64,
            diag: vec![
                diag_accum[0] * scale,
                diag_accum[1] * scale,
                diag_accum[2] * scale,
                diag_accum[3] * scale,
                updates as f64,
            ],
        });

        if state.batch_index % cfg.checkpoint_every == 0 || state.batch_index == batches {
            let ck = sac_checkpoint(&state, &scenario, hash, cfg.mpc_shaping);
            ck.save(&checkpoint_path)?;
        }
    }

    let (log_path, curve_path) = write_training_outputs(
        cfg,
        hash,
        &logs,
        "critic1_loss,critic2_loss,actor_objective,mean_entropy,updates",
    )?;
    let ck = sac_checkpoint(&state, &scenario, hash, cfg.mpc_shaping);
    ck.save(&checkpoint_path)?;
    Ok(TrainOutcome {
        batches_run: state.batch_index,
        checkpoint: checkpoint_path,
        log_path,
        curve_path,
        mean_final_return: logs.last().map(|l| l.mean_standalone_return).unwrap_or(0.0),
    })
}

/// On resume, prior batch rows are reloaded so the final log covers the
/// whole run.
fn read_existing_log(out_dir: &Path, resumed_batches: usize) -> Result<Vec<BatchLog>> {
    let path = out_dir.join("training_log.csv");
    if resumed_batches == 0 || !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path)?;
    let mut logs = Vec::new();
    for line in text.lines().skip(2) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            continue;
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::Config("bad log row".into()));
        logs.push(BatchLog {
            batch: fields[0].parse().unwrap_or(0),
            episodes: fields[1].parse().unwrap_or(0),
            env_steps: fields[2].parse().unwrap_or(0),
            mean_return: parse(fields[3])?,
            mean_standalone_return: parse(fields[4])?,
            diag: fields[5..]
                .iter()
                .map(|f| f.parse::<f64>().unwrap_or(0.0))
                .collect(),
        });
        if logs.len() >= resumed_batches {
            break;
        }
    }
    Ok(logs)
}

// ---------------------------------------------------------------------
// Policy construction
// ---------------------------------------------------------------------

/// Builds the policy for an evaluation or simulation command; checkpoint
/// policies are checked against the scenario's dimensions.
pub fn build_policy(choice: &PolicyChoice, scenario: &ScenarioConfig) -> Result<(Policy, String)> {
    match choice {
        PolicyChoice::Null => Ok((Policy::Null, "null".into())),
        PolicyChoice::MpcOnly => Ok((Policy::MpcReceding { plan: None }, "mpc-only".into())),
        PolicyChoice::Oracle => Ok((Policy::PlanReplay { plan: None }, "oracle".into())),
        PolicyChoice::Checkpoint(path) => {
            let ck = Checkpoint::load(path)?;
            let algo = ck.text_section("meta/algo")?.to_string();
            let shaped = ck.scalar_u64("meta/mpc_shaping").unwrap_or(0) != 0;
            let normalizer = load_normalizer(&ck, "normalizer")?;
            if normalizer.dim() != scenario.mode.obs_dim() {
                return Err(Error::Checkpoint(format!(
                    "checkpoint observes {} features, scenario needs {}",
                    normalizer.dim(),
                    scenario.mode.obs_dim()
                )));
            }
            let actor = load_mlp(&ck, "actor")?;
            let method = format!("{algo}{}", if shaped { "-mpc" } else { "" });
            let policy = match algo.as_str() {
                "ppo" => {
                    if actor.spec.output_dim() != scenario.mode.act_dim() {
                        return Err(Error::Checkpoint("actor action width mismatch".into()));
                    }
                    Policy::PpoActor { actor, normalizer }
                }
                "sac" => {
                    if actor.spec.output_dim() != 2 * scenario.mode.act_dim() {
                        return Err(Error::Checkpoint("actor action width mismatch".into()));
                    }
                    Policy::SacActor { actor, normalizer }
                }
                other => {
                    return Err(Error::Checkpoint(format!("unknown checkpoint algo '{other}'")))
                }
            };
            Ok((policy, method))
        }
    }
}

// ---------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EvaluateOutcome {
    pub report: MetricsReport,
    pub runs_csv: PathBuf,
    pub summary_json: PathBuf,
}

pub fn evaluate(
    scenario_name: &str,
    choice: &PolicyChoice,
    n_runs: usize,
    seed: u64,
    out_dir: &Path,
    fill: Option<f64>,
) -> Result<EvaluateOutcome> {
    if n_runs == 0 {
        return Err(Error::InvalidParam("evaluation needs at least one run".into()));
    }
    let (scenario, _text, hash) = resolve_scenario(scenario_name, fill)?;
    create_out_dir(out_dir)?;
    let (policy, method) = build_policy(choice, &scenario)?;
    let report = run_monte_carlo(&policy, &scenario, &hash, &method, n_runs, seed)?;

    let runs_csv = out_dir.join(format!("report_runs_{method}.csv"));
    write_runs_csv(&runs_csv, &report)?;
    let summary_json = out_dir.join(format!("report_summary_{method}.json"));
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    std::fs::write(&summary_json, json)?;
    Ok(EvaluateOutcome {
        report,
        runs_csv,
        summary_json,
    })
}

fn write_runs_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header_line(
        &report.scenario_hash,
        report.root_seed,
        &format!("scenario={} method={}", report.scenario, report.method),
    ));
    out.push_str(
        "run,success,steps,termination,pos_error,att_error_deg,control_effort,torque_effort,standalone_return\n",
    );
    for r in &report.per_run {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.run_index,
            r.success as u8,
            r.steps,
            r.termination,
            fmt_f64(r.pos_error),
            fmt_f64(r.att_error_deg),
            fmt_f64(r.control_effort),
            fmt_f64(r.torque_effort),
            fmt_f64(r.standalone_return),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a per-run CSV produced by [`evaluate`] back into a report.
pub fn read_runs_csv(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty report file".into()))?;
    let mut hash = String::new();
    let mut seed = 0u64;
    let mut scenario = String::new();
    let mut method = String::new();
    for token in header.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = token.split_once('=') {
            match k {
                "config_hash" => hash = v.into(),
                "seed" => seed = v.parse().unwrap_or(0),
                "scenario" => scenario = v.into(),
                "method" => method = v.into(),
                _ => {}
            }
        }
    }
    lines.next(); // column header
    let mut per_run = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Config(format!("malformed report row: {line}")));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad float '{s}'")))
        };
        per_run.push(RunRecord {
            run_index: f[0].parse().unwrap_or(0),
            success: f[1] == "1",
            steps: f[2].parse().unwrap_or(0),
            termination: f[3].into(),
            pos_error: num(f[4])?,
            att_error_deg: num(f[5])?,
            control_effort: num(f[6])?,
            torque_effort: num(f[7])?,
            standalone_return: num(f[8])?,
        });
    }
    Ok(MetricsReport::from_records(&method, &scenario, &hash, seed, per_run))
}

// ---------------------------------------------------------------------
// Simulation traces
// ---------------------------------------------------------------------

fn trace_columns(mode: ControlMode) -> String {
    let mut cols = vec!["t".to_string()];
    for name in [
        "px", "py", "pz", "vx", "vy", "vz", "qx", "qy", "qz", "qw", "wx", "wy", "wz",
    ] {
        cols.push(name.into());
    }
    for i in 0..mode.act_dim() {
        cols.push(format!("act{i}"));
    }
    for name in ["fx", "fy", "fz", "tx", "ty", "tz"] {
        cols.push(name.into());
    }
    cols.push("reward".into());
    cols.push("standalone_reward".into());
    for name in ["slosh_fx", "slosh_fy", "slosh_fz", "slosh_tx", "slosh_ty", "slosh_tz"] {
        cols.push(name.into());
    }
    for name in [
        "ref_px", "ref_py", "ref_pz", "ref_vx", "ref_vy", "ref_vz", "ref_qx", "ref_qy", "ref_qz",
        "ref_qw", "ref_wx", "ref_wy", "ref_wz",
    ] {
        cols.push(name.into());
    }
    cols.join(",")
}

fn trace_row(t: f64, tr: &Transition, mode: ControlMode) -> String {
    let mut fields = vec![fmt_f64(t)];
    let s = tr.next_state.to_vector();
    for value in s.iter() {
        fields.push(fmt_f64(*value));
    }
    for i in 0..mode.act_dim() {
        fields.push(fmt_f64(tr.action_raw[i]));
    }
    let u = tr.action_wrench.to_vector();
    for value in u.iter() {
        fields.push(fmt_f64(*value));
    }
    fields.push(fmt_f64(tr.reward));
    fields.push(fmt_f64(tr.info.standalone_reward));
    for value in tr.info.slosh_force.iter().chain(tr.info.slosh_torque.iter()) {
        fields.push(fmt_f64(*value));
    }
    match &tr.info.mpc_reference {
        Some(reference) => {
            for value in reference.to_vector().iter() {
                fields.push(fmt_f64(*value));
            }
        }
        None => fields.extend(std::iter::repeat_n(String::new(), 13)),
    }
    fields.join(",")
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub trace_csv: PathBuf,
    pub steps: usize,
    pub termination: String,
}

/// Runs one full episode at control-period resolution and dumps the trace.
pub fn simulate(
    scenario_name: &str,
    choice: &PolicyChoice,
    seed: u64,
    out_dir: &Path,
    fill: Option<f64>,
    with_reference: bool,
) -> Result<SimulateOutcome> {
    let (scenario, _text, hash) = resolve_scenario(scenario_name, fill)?;
    create_out_dir(out_dir)?;
    let (mut policy, method) = build_policy(choice, &scenario)?;

    let rng = split_rng(seed, 0);
    let mut ctx = reset(scenario.clone(), with_reference, true, rng)?;
    policy.begin_episode(&ctx)?;

    let mut out = String::new();
    out.push_str(&header_line(
        &hash,
        seed,
        &format!("scenario={} method={method}", scenario.name),
    ));
    out.push_str(&trace_columns(scenario.mode));
    out.push('\n');
    // Initial row: the reset state with empty action/reward fields.
    {
        let mut fields = vec![fmt_f64(0.0)];
        for value in ctx.state.to_vector().iter() {
            fields.push(fmt_f64(*value));
        }
        let filler = scenario.mode.act_dim() + 6 + 2 + 6 + 13;
        fields.extend(std::iter::repeat_n(String::new(), filler));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let mut termination = "time-limit".to_string();
    while !ctx.is_done() {
        let action = policy.act(&ctx)?;
        let tr = step(&mut ctx, &action)?;
        out.push_str(&trace_row(ctx.t, &tr, scenario.mode));
        out.push('\n');
        if let Some(cause) = tr.cause {
            termination = cause.as_str().into();
        }
    }

    let trace_csv = out_dir.join(format!("trace_{method}.csv"));
    std::fs::write(&trace_csv, out)?;
    Ok(SimulateOutcome {
        trace_csv,
        steps: ctx.step_count,
        termination,
    })
}

// ---------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------

/// Parses `x,y,z[,vx,vy,vz]` into a rest-attitude state.
pub fn parse_initial_state(text: &str) -> Result<StateVector> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad initial-state component '{p}'")))
        })
        .collect::<Result<_>>()?;
    if parts.len() != 3 && parts.len() != 6 {
        return Err(Error::Config(
            "initial state needs 3 (position) or 6 (position,velocity) components".into(),
        ));
    }
    let mut state = StateVector::rest();
    state.rel_pos = Vector3::new(parts[0], parts[1], parts[2]);
    if parts.len() == 6 {
        state.rel_vel = Vector3::new(parts[3], parts[4], parts[5]);
    }
    Ok(state)
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub plan_csv: PathBuf,
    pub converged: bool,
    pub kkt_residual: f64,
    pub states_feasible: bool,
}

/// Solves one nominal plan from the given initial state and persists it.
pub fn plan_cmd(
    scenario_name: &str,
    initial: &StateVector,
    seed: u64,
    out_dir: &Path,
) -> Result<PlanOutcome> {
    let (scenario, _text, hash) = resolve_scenario(scenario_name, None)?;
    create_out_dir(out_dir)?;
    let plan = env::plan_from(&scenario, initial, 0.0)?;

    let mut out = String::new();
    out.push_str(&header_line(
        &hash,
        seed,
        &format!("scenario={} method=plan", scenario.name),
    ));
    out.push_str("t,px,py,pz,vx,vy,vz,qx,qy,qz,qw,wx,wy,wz,fx,fy,fz,tx,ty,tz\n");
    for (k, state) in plan.states.iter().enumerate() {
        let t = plan.start_time + k as f64 * plan.dt;
        let mut fields = vec![fmt_f64(t)];
        for value in state.to_vector().iter() {
            fields.push(fmt_f64(*value));
        }
        let control = if k < plan.controls.len() {
            plan.controls[k].to_vector()
        } else {
            crate::dynamics::ControlInput::zero().to_vector()
        };
        for value in control.iter() {
            fields.push(fmt_f64(*value));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let plan_csv = out_dir.join("plan.csv");
    std::fs::write(&plan_csv, out)?;

    let outcome = PlanOutcome {
        plan_csv,
        converged: plan.solve_status.converged(),
        kkt_residual: plan.kkt_residual,
        states_feasible: plan.states_feasible,
    };
    if !outcome.converged {
        return Err(Error::Solver(format!(
            "planner stopped at max iterations (kkt residual {:.3e}); plan written to {}",
            outcome.kkt_residual,
            outcome.plan_csv.display()
        )));
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------
// Report re-aggregation
// ---------------------------------------------------------------------

pub fn report_cmd(inputs: &[PathBuf], out_dir: &Path) -> Result<(MethodComparison, PathBuf)> {
    if inputs.len() < 2 {
        return Err(Error::InvalidParam(
            "report needs at least two per-run CSV files".into(),
        ));
    }
    create_out_dir(out_dir)?;
    let reports: Vec<MetricsReport> = inputs
        .iter()
        .map(|p| read_runs_csv(p))
        .collect::<Result<_>>()?;
    let comparison = compare_methods(&reports)?;

    let path = out_dir.join("comparison.csv");
    let mut out = String::new();
    out.push_str(&header_line(
        &reports[0].scenario_hash,
        comparison.root_seed,
        &format!("scenario={} baseline={}", comparison.scenario, comparison.baseline),
    ));
    out.push_str("rank,method\n");
    for (i, m) in comparison.ranking.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, m));
    }
    out.push_str("method,metric,mean_delta,ci_low,ci_high\n");
    for d in &comparison.deltas {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            d.method,
            d.metric,
            fmt_f64(d.mean_delta),
            fmt_f64(d.ci_low),
            fmt_f64(d.ci_high)
        ));
    }
    std::fs::write(&path, out)?;
    Ok((comparison, path))
}

/// Writes a text summary of a metrics report to the given writer.
pub fn print_report(report: &MetricsReport, mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "method={} scenario={} runs={} seed={}",
        report.method, report.scenario, report.runs, report.root_seed
    )?;
    writeln!(w, "  success_ratio   {:.4}", report.success_ratio)?;
    writeln!(
        w,
        "  pos_error (m)   {:.4} +/- {:.4}",
        report.pos_error.mean, report.pos_error.std
    )?;
    writeln!(
        w,
        "  att_error (deg) {:.4} +/- {:.4}",
        report.att_error_deg.mean, report.att_error_deg.std
    )?;
    writeln!(
        w,
        "  effort (N s)    {:.4} +/- {:.4}",
        report.control_effort.mean, report.control_effort.std
    )?;
    Ok(())
}
