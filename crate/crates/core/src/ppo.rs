//! On-policy actor-critic with a clipped probability-ratio objective.
//!
//! Advantages come from full-episode Monte Carlo returns against the value
//! network, standardized per batch. Updates run several epochs of
//! minibatch ascent on the clipped surrogate and descent on the value
//! loss, halting early once the estimated divergence between the behavior
//! and updated policies exceeds 1.5x the configured target.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    diag_gaussian_log_prob, AdamState, AdamVector, MlpGradient, MlpParams, MlpSpec,
    OutputActivation,
};

/// Exponent clamp guarding probability-ratio overflow.
pub const RATIO_EXPONENT_CLAMP: f64 = 20.0;
/// Epoch loop halts once mean KL exceeds this multiple of the target.
pub const KL_HALT_FACTOR: f64 = 1.5;
/// Initial policy standard deviation (log-space parameter).
pub const LOG_STD_INIT: f64 = -0.6931471805599453;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    /// Discount factor gamma in (0, 1].
    pub discount: f64,
    /// Ratio clip half-width epsilon.
    pub clip: f64,
    /// KL divergence target guarding the epoch loop.
    pub kl_target: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Episodes collected per update batch.
    pub batch_episodes: usize,
    pub epochs_per_batch: usize,
    pub minibatch: usize,
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidParam("discount must be in (0, 1]".into()));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidParam("clip must be positive".into()));
        }
        if !(self.kl_target > 0.0) {
            return Err(Error::InvalidParam("kl_target must be positive".into()));
        }
        if self.batch_episodes == 0 || self.epochs_per_batch == 0 || self.minibatch == 0 {
            return Err(Error::InvalidParam("batch sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One stored rollout step. Observations are kept as fed to the networks
/// (already normalized at collection time) and actions as the pre-clip
/// Gaussian draw whose density the behavior policy reported.
#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub obs: DVector<f64>,
    pub action: DVector<f64>,
    pub reward: f64,
    pub log_prob: f64,
    /// Reward under the standalone (unshaped) function, for logging and
    /// cross-method comparison.
    pub standalone_reward: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutEpisode {
    pub steps: Vec<RolloutStep>,
    pub complete: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub episodes: Vec<RolloutEpisode>,
}

impl RolloutBuffer {
    pub fn step_count(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }
}

/// Actor, state-independent log standard deviations, and critic.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoNets {
    pub actor: MlpParams,
    pub log_std: DVector<f64>,
    pub critic: MlpParams,
}

impl PpoNets {
    /// Actor 2 hidden layers (128, 64); critic 3 hidden layers
    /// (128, 64, 8); hyperbolic-tangent activations and linear outputs.
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, rng: &mut R) -> Result<Self> {
        let actor_spec = MlpSpec::new(vec![obs_dim, 128, 64, act_dim], OutputActivation::Linear)?;
        let critic_spec = MlpSpec::new(vec![obs_dim, 128, 64, 8, 1], OutputActivation::Linear)?;
        Ok(Self {
            actor: MlpParams::init(actor_spec, rng),
            log_std: DVector::from_element(act_dim, LOG_STD_INIT),
            critic: MlpParams::init(critic_spec, rng),
        })
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn std(&self) -> DVector<f64> {
        self.log_std.map(f64::exp)
    }

    pub fn value(&self, obs: &DVector<f64>) -> Result<f64> {
        Ok(self.critic.infer(obs)?[0])
    }

    pub fn log_prob(&self, obs: &DVector<f64>, action: &DVector<f64>) -> Result<f64> {
        let mean = self.actor.infer(obs)?;
        Ok(diag_gaussian_log_prob(&mean, &self.std(), action))
    }
}

#[derive(Debug, Clone)]
pub struct PpoOptimizers {
    pub actor: AdamState,
    pub log_std: AdamVector,
    pub critic: AdamState,
}

impl PpoOptimizers {
    pub fn new(nets: &PpoNets, config: &PpoConfig) -> Self {
        Self {
            actor: AdamState::new(&nets.actor, config.actor_lr),
            log_std: AdamVector::new(nets.log_std.len(), config.actor_lr),
            critic: AdamState::new(&nets.critic, config.critic_lr),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpoDiagnostics {
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub surrogate: f64,
    pub epochs_run: usize,
    pub halted_early: bool,
    /// Ratio exponent clamps observed during the update (overflow guard).
    pub ratio_clamps: usize,
}

/// Discounted returns per episode by backward recursion.
pub fn compute_returns(buffer: &RolloutBuffer, discount: f64) -> Result<Vec<Vec<f64>>> {
    let mut all = Vec::with_capacity(buffer.episodes.len());
    for ep in &buffer.episodes {
        if !ep.complete {
            return Err(Error::InvalidParam(
                "returns require complete episodes".into(),
            ));
        }
        let mut returns = vec![0.0; ep.steps.len()];
        let mut acc = 0.0;
        for (i, step) in ep.steps.iter().enumerate().rev() {
            acc = step.reward + discount * acc;
            returns[i] = acc;
        }
        all.push(returns);
    }
    Ok(all)
}

/// Return-minus-value advantages, batch standardized to zero mean and unit
/// standard deviation. Also reports the raw (pre-standardization) values.
pub fn compute_advantages(
    buffer: &RolloutBuffer,
    returns: &[Vec<f64>],
    critic: &MlpParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut raw = Vec::with_capacity(buffer.step_count());
    for (ep, ep_returns) in buffer.episodes.iter().zip(returns.iter()) {
        for (step, g) in ep.steps.iter().zip(ep_returns.iter()) {
            let v = critic.infer(&step.obs)?[0];
            raw.push(g - v);
        }
    }
    if raw.is_empty() {
        return Err(Error::InvalidParam("empty rollout buffer".into()));
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let standardized = if std < 1e-8 {
        raw.iter().map(|a| a - mean).collect()
    } else {
        raw.iter().map(|a| (a - mean) / std).collect()
    };
    Ok((standardized, raw))
}

/// Probability ratio between updated and behavior policies, with the
/// exponent clamped to guard overflow. Returns the ratio and whether the
/// clamp engaged.
pub fn policy_ratio(new_log_prob: f64, old_log_prob: f64) -> (f64, bool) {
    let exponent = new_log_prob - old_log_prob;
    let clamped = exponent.abs() > RATIO_EXPONENT_CLAMP;
    (
        exponent.clamp(-RATIO_EXPONENT_CLAMP, RATIO_EXPONENT_CLAMP).exp(),
        clamped,
    )
}

/// Clipped surrogate value for one step.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Mean squared value-function loss `1/2 E (V - G)^2` and its gradient.
pub fn value_loss(
    critic: &MlpParams,
    buffer: &RolloutBuffer,
    returns: &[Vec<f64>],
) -> Result<(f64, MlpGradient)> {
    let count = buffer.step_count();
    if count == 0 {
        return Err(Error::InvalidParam("empty rollout buffer".into()));
    }
    let mut loss = 0.0;
    let mut grad = critic.zeros_gradient();
    let scale = 1.0 / count as f64;
    for (ep, ep_returns) in buffer.episodes.iter().zip(returns.iter()) {
        for (step, g) in ep.steps.iter().zip(ep_returns.iter()) {
            let (v, cache) = critic.forward(&step.obs)?;
            let err = v[0] - g;
            loss += 0.5 * err * err * scale;
            let upstream = DVector::from_element(1, err * scale);
            let (g_i, _) = critic.backward(&cache, &upstream)?;
            grad.add_scaled(&g_i, 1.0);
        }
    }
    Ok((loss, grad))
}

/// Surrogate objective over a set of steps together with actor-parameter
/// gradients (of the negated objective, ready for a descent optimizer).
fn surrogate_gradients(
    nets: &PpoNets,
    steps: &[&RolloutStep],
    advantages: &[f64],
    clip: f64,
    actor_grad: &mut MlpGradient,
    log_std_grad: &mut DVector<f64>,
    clamp_events: &mut usize,
) -> Result<f64> {
    let std = nets.std();
    let scale = 1.0 / steps.len() as f64;
    let mut objective = 0.0;
    for (step, &adv) in steps.iter().zip(advantages.iter()) {
        let (mean, cache) = nets.actor.forward(&step.obs)?;
        let new_lp = diag_gaussian_log_prob(&mean, &std, &step.action);
        let (ratio, clamped) = policy_ratio(new_lp, step.log_prob);
        if clamped {
            *clamp_events += 1;
        }
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        let surr_unclipped = ratio * adv;
        let surr_clipped = clipped * adv;
        objective += surr_unclipped.min(surr_clipped) * scale;

        // Gradient flows only through the active branch; the clipped branch
        // is constant in the parameters outside the trust band.
        let active_unclipped = surr_unclipped <= surr_clipped;
        if !active_unclipped || clamped {
            continue;
        }
        let dobj_dlp = ratio * adv;
        // Descent gradient of the negated objective.
        let coeff = -dobj_dlp * scale;
        let mut upstream = DVector::zeros(mean.len());
        for i in 0..mean.len() {
            let z = (step.action[i] - mean[i]) / std[i];
            upstream[i] = coeff * z / std[i];
            log_std_grad[i] += coeff * (z * z - 1.0);
        }
        let (g, _) = nets.actor.backward(&cache, &upstream)?;
        actor_grad.add_scaled(&g, 1.0);
    }
    Ok(objective)
}

/// Nonnegative per-sample divergence estimator `r - 1 - ln r`, averaged
/// over the batch (its expectation under the behavior policy is the KL
/// divergence from the updated policy), plus the clip-band fraction.
fn kl_and_clip_fraction(nets: &PpoNets, steps: &[&RolloutStep], clip: f64) -> Result<(f64, f64)> {
    let std = nets.std();
    let mut kl = 0.0;
    let mut clipped = 0usize;
    for step in steps {
        let mean = nets.actor.infer(&step.obs)?;
        let new_lp = diag_gaussian_log_prob(&mean, &std, &step.action);
        let (ratio, _) = policy_ratio(new_lp, step.log_prob);
        kl += ratio - 1.0 - ratio.ln();
        if (ratio - 1.0).abs() > clip {
            clipped += 1;
        }
    }
    Ok((
        kl / steps.len() as f64,
        clipped as f64 / steps.len() as f64,
    ))
}

/// Several epochs of minibatch surrogate ascent and value descent with the
/// KL early stop. Returns diagnostics of the finished update.
pub fn ppo_update<R: Rng>(
    buffer: &RolloutBuffer,
    nets: &mut PpoNets,
    opts: &mut PpoOptimizers,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<PpoDiagnostics> {
    config.validate()?;
    if buffer.episodes.is_empty() || buffer.step_count() == 0 {
        return Err(Error::InvalidParam("ppo_update needs at least one episode".into()));
    }
    let returns = compute_returns(buffer, config.discount)?;
    let (advantages, _) = compute_advantages(buffer, &returns, &nets.critic)?;
    let steps: Vec<&RolloutStep> = buffer.episodes.iter().flat_map(|e| e.steps.iter()).collect();
    let returns_flat: Vec<f64> = returns.iter().flatten().copied().collect();

    let mut diag = PpoDiagnostics::default();
    let mut indices: Vec<usize> = (0..steps.len()).collect();

    for epoch in 0..config.epochs_per_batch {
        indices.shuffle(rng);
        for chunk in indices.chunks(config.minibatch) {
            let mb_steps: Vec<&RolloutStep> = chunk.iter().map(|&i| steps[i]).collect();
            let mb_adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();

            let mut actor_grad = nets.actor.zeros_gradient();
            let mut log_std_grad = DVector::zeros(nets.log_std.len());
            let surrogate = surrogate_gradients(
                nets,
                &mb_steps,
                &mb_adv,
                config.clip,
                &mut actor_grad,
                &mut log_std_grad,
                &mut diag.ratio_clamps,
            )?;
            if !surrogate.is_finite() {
                return Err(Error::Divergence("surrogate objective not finite".into()));
            }
            diag.surrogate = surrogate;
            opts.actor.apply(&mut nets.actor, &actor_grad)?;
            opts.log_std.apply(&mut nets.log_std, &log_std_grad)?;

            // Critic minibatch: same samples, half-MSE descent.
            let mut critic_grad = nets.critic.zeros_gradient();
            let mut loss = 0.0;
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (v, cache) = nets.critic.forward(&steps[i].obs)?;
                let err = v[0] - returns_flat[i];
                loss += 0.5 * err * err * scale;
                let (g, _) = nets
                    .critic
                    .backward(&cache, &DVector::from_element(1, err * scale))?;
                critic_grad.add_scaled(&g, 1.0);
            }
            if !loss.is_finite() {
                return Err(Error::Divergence("value loss not finite".into()));
            }
            diag.value_loss = loss;
            opts.critic.apply(&mut nets.critic, &critic_grad)?;
        }

        diag.epochs_run = epoch + 1;
        let (kl, clip_fraction) = kl_and_clip_fraction(nets, &steps, config.clip)?;
        diag.mean_kl = kl;
        diag.clip_fraction = clip_fraction;
        if kl > KL_HALT_FACTOR * config.kl_target {
            diag.halted_early = true;
            break;
        }
    }
    Ok(diag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn episode_from_rewards(rewards: &[f64], obs_dim: usize, act_dim: usize) -> RolloutEpisode {
        RolloutEpisode {
            steps: rewards
                .iter()
                .map(|&r| RolloutStep {
                    obs: DVector::zeros(obs_dim),
                    action: DVector::zeros(act_dim),
                    reward: r,
                    log_prob: 0.0,
                    standalone_reward: r,
                })
                .collect(),
            complete: true,
        }
    }

    fn zero_critic(nets: &mut PpoNets) {
        for w in &mut nets.critic.weights {
            w.fill(0.0);
        }
        for b in &mut nets.critic.biases {
            b.fill(0.0);
        }
    }

    #[test]
    fn two_step_returns() {
        let buffer = RolloutBuffer {
            episodes: vec![episode_from_rewards(&[1.0, 1.0], 2, 1)],
        };
        let returns = compute_returns(&buffer, 0.5).unwrap();
        assert_eq!(returns[0], vec![1.5, 1.0]);
    }

    #[test]
    fn zero_rewards_zero_returns() {
        let buffer = RolloutBuffer {
            episodes: vec![episode_from_rewards(&[0.0; 7], 2, 1)],
        };
        let returns = compute_returns(&buffer, 0.98).unwrap();
        assert!(returns[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn returns_match_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rewards: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gamma = 0.93;
        let buffer = RolloutBuffer {
            episodes: vec![episode_from_rewards(&rewards, 2, 1)],
        };
        let returns = compute_returns(&buffer, gamma).unwrap();
        for t in 0..rewards.len() {
            let mut brute = 0.0;
            for k in t..rewards.len() {
                brute += gamma.powi((k - t) as i32) * rewards[k];
            }
            assert!((returns[0][t] - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn incomplete_episode_rejected() {
        let mut ep = episode_from_rewards(&[1.0], 2, 1);
        ep.complete = false;
        let buffer = RolloutBuffer { episodes: vec![ep] };
        assert!(compute_returns(&buffer, 0.9).is_err());
    }

    #[test]
    fn advantage_arithmetic() {
        // rewards [1, 1], gamma 0.5, V(s) = 1 everywhere: A_0 = 0.5 raw.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut nets = PpoNets::new(2, 1, &mut rng).unwrap();
        zero_critic(&mut nets);
        let last = nets.critic.biases.len() - 1;
        nets.critic.biases[last][0] = 1.0;
        let buffer = RolloutBuffer {
            episodes: vec![episode_from_rewards(&[1.0, 1.0], 2, 1)],
        };
        let returns = compute_returns(&buffer, 0.5).unwrap();
        let (standardized, raw) = compute_advantages(&buffer, &returns, &nets.critic).unwrap();
        assert!((raw[0] - 0.5).abs() < 1e-12);
        assert!((raw[1] - 0.0).abs() < 1e-12);
        let mean: f64 = standardized.iter().sum::<f64>() / standardized.len() as f64;
        let std: f64 = (standardized.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / standardized.len() as f64)
            .sqrt();
        assert!(mean.abs() < 1e-10);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn perfect_critic_zero_advantages() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut nets = PpoNets::new(2, 1, &mut rng).unwrap();
        zero_critic(&mut nets);
        // All returns are zero with zero rewards, matching V = 0.
        let buffer = RolloutBuffer {
            episodes: vec![episode_from_rewards(&[0.0; 5], 2, 1)],
        };
        let returns = compute_returns(&buffer, 0.9).unwrap();
        let (_, raw) = compute_advantages(&buffer, &returns, &nets.critic).unwrap();
        assert!(raw.iter().all(|&a| a.abs() < 1e-15));
    }

    #[test]
    fn ratio_identities() {
        assert_eq!(policy_ratio(-1.3, -1.3).0, 1.0);
        let (r, _) = policy_ratio(0.6f64.ln(), 0.3f64.ln());
        assert!((r - 2.0).abs() < 1e-12);
        // Telescoping: r(a,b) r(b,c) = r(a,c).
        let (ab, _) = policy_ratio(-0.4, -1.1);
        let (bc, _) = policy_ratio(-1.1, -2.3);
        let (ac, _) = policy_ratio(-0.4, -2.3);
        assert!((ab * bc - ac).abs() < 1e-12);
        // Overflow guard.
        let (r, clamped) = policy_ratio(100.0, 0.0);
        assert!(clamped);
        assert!((r - RATIO_EXPONENT_CLAMP.exp()).abs() < 1e-6);
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clipped_objective(1.0, 3.7, 0.2), 3.7);
        assert!((clipped_objective(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_objective(0.5, -1.0, 0.2) - (-0.8)).abs() < 1e-15);
    }

    #[test]
    fn value_loss_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut nets = PpoNets::new(2, 1, &mut rng).unwrap();
        zero_critic(&mut nets);
        // Single sample V = 0, G = 2: loss = 1/2 * 4 = 2.
        let buffer = RolloutBuffer {
            episodes: vec![episode_from_rewards(&[2.0], 2, 1)],
        };
        let returns = compute_returns(&buffer, 0.9).unwrap();
        let (loss, _) = value_loss(&nets.critic, &buffer, &returns).unwrap();
        assert!((loss - 2.0).abs() < 1e-12);
        // V = G everywhere: zero loss, zero gradient.
        let zero_buffer = RolloutBuffer {
            episodes: vec![episode_from_rewards(&[0.0; 4], 2, 1)],
        };
        let zero_returns = compute_returns(&zero_buffer, 0.9).unwrap();
        let (loss0, grad0) = value_loss(&nets.critic, &zero_buffer, &zero_returns).unwrap();
        assert_eq!(loss0, 0.0);
        assert!(grad0.norm() < 1e-15);
    }

    fn random_buffer(
        nets: &PpoNets,
        episodes: usize,
        steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> RolloutBuffer {
        let obs_dim = nets.actor.spec.input_dim();
        let std = nets.std();
        let mut buffer = RolloutBuffer::default();
        for _ in 0..episodes {
            let mut ep = RolloutEpisode {
                steps: Vec::new(),
                complete: true,
            };
            for _ in 0..steps {
                let obs = DVector::from_fn(obs_dim, |_, _| rng.gen_range(-1.0..1.0));
                let mean = nets.actor.infer(&obs).unwrap();
                let (action, lp) = crate::nn::sample_diag_gaussian(&mean, &std, rng).unwrap();
                let reward = rng.gen_range(-1.0..1.0);
                ep.steps.push(RolloutStep {
                    obs,
                    action,
                    reward,
                    log_prob: lp,
                    standalone_reward: reward,
                });
            }
            buffer.episodes.push(ep);
        }
        buffer
    }

    #[test]
    fn zero_advantages_leave_actor_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut nets = PpoNets::new(3, 2, &mut rng).unwrap();
        // Zero rewards and a zeroed critic give identically zero advantages.
        zero_critic(&mut nets);
        let mut buffer = random_buffer(&nets, 2, 10, &mut rng);
        for ep in &mut buffer.episodes {
            for s in &mut ep.steps {
                s.reward = 0.0;
            }
        }
        let actor_before = nets.actor.clone();
        let log_std_before = nets.log_std.clone();
        let config = PpoConfig {
            discount: 0.98,
            clip: 0.2,
            kl_target: 1e9, // never halt
            actor_lr: 1e-2,
            critic_lr: 1e-2,
            batch_episodes: 2,
            epochs_per_batch: 3,
            minibatch: 8,
        };
        let mut opts = PpoOptimizers::new(&nets, &config);
        ppo_update(&buffer, &mut nets, &mut opts, &config, &mut rng).unwrap();
        assert_eq!(nets.actor, actor_before);
        assert_eq!(nets.log_std, log_std_before);
    }

    #[test]
    fn update_keeps_ratios_in_band_and_is_reproducible() {
        let config = PpoConfig {
            discount: 0.98,
            clip: 0.2,
            kl_target: 0.05,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            batch_episodes: 3,
            epochs_per_batch: 5,
            minibatch: 16,
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut nets = PpoNets::new(4, 2, &mut rng).unwrap();
            let buffer = random_buffer(&nets, 3, 20, &mut rng);
            let mut opts = PpoOptimizers::new(&nets, &config);
            let diag = ppo_update(&buffer, &mut nets, &mut opts, &config, &mut rng).unwrap();
            (diag, nets, buffer)
        };
        let (diag_a, nets_a, buffer_a) = run();
        let (diag_b, nets_b, _) = run();
        assert_eq!(diag_a, diag_b);
        assert_eq!(nets_a, nets_b);
        assert!(diag_a.mean_kl >= 0.0);
        assert!((0.0..=1.0).contains(&diag_a.clip_fraction));

        // Post-update mean ratio stays within a loose trust band.
        let std = nets_a.std();
        let mut ratio_sum = 0.0;
        let mut count = 0usize;
        for ep in &buffer_a.episodes {
            for step in &ep.steps {
                let mean = nets_a.actor.infer(&step.obs).unwrap();
                let lp = diag_gaussian_log_prob(&mean, &std, &step.action);
                ratio_sum += policy_ratio(lp, step.log_prob).0;
                count += 1;
            }
        }
        let mean_ratio = ratio_sum / count as f64;
        assert!(
            (1.0 - 2.0 * config.clip..=1.0 + 2.0 * config.clip).contains(&mean_ratio),
            "mean ratio {mean_ratio} escaped the band"
        );
    }

    #[test]
    fn oversized_learning_rate_triggers_kl_halt() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut nets = PpoNets::new(3, 2, &mut rng).unwrap();
        let buffer = random_buffer(&nets, 2, 25, &mut rng);
        let config = PpoConfig {
            discount: 0.98,
            clip: 0.2,
            kl_target: 0.001,
            actor_lr: 0.2,
            critic_lr: 1e-3,
            batch_episodes: 2,
            epochs_per_batch: 10,
            minibatch: 16,
        };
        let mut opts = PpoOptimizers::new(&nets, &config);
        let diag = ppo_update(&buffer, &mut nets, &mut opts, &config, &mut rng).unwrap();
        assert!(diag.halted_early);
        assert!(diag.epochs_run < config.epochs_per_batch);
    }
}
