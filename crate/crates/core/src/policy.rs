//! Control policies evaluated by the Monte Carlo harness and the episode
//! simulator: trained actors run deterministically, the planner runs in
//! receding-horizon closed loop, the scripted oracle replays its
//! episode-start plan open loop, and the null policy coasts.

use nalgebra::DVector;

use crate::dynamics::ControlInput;
use crate::env::{plan_from, ControlMode, EpisodeContext};
use crate::error::{Error, Result};
use crate::mpc::TrajectoryPlan;
use crate::nn::{clip_action, MlpParams, RunningNormalizer};

/// Converts a physical wrench back to the normalized action box.
pub fn wrench_to_raw(u: &ControlInput, mode: ControlMode, force_limit: f64, torque_limit: f64) -> DVector<f64> {
    match mode {
        ControlMode::Planar => DVector::from_column_slice(&[
            u.force[0] / force_limit,
            u.force[1] / force_limit,
            u.torque[2] / torque_limit,
        ]),
        ControlMode::Docking => DVector::from_column_slice(&[
            u.force[0] / force_limit,
            u.force[1] / force_limit,
            u.force[2] / force_limit,
            u.torque[0] / torque_limit,
            u.torque[1] / torque_limit,
            u.torque[2] / torque_limit,
        ]),
    }
}

/// A deployable controller.
#[derive(Debug, Clone)]
pub enum Policy {
    /// Zero wrench at every step.
    Null,
    /// Deterministic on-policy actor: normalized observation through the
    /// mean network, clamped to the action box.
    PpoActor {
        actor: MlpParams,
        normalizer: RunningNormalizer,
    },
    /// Deterministic off-policy actor: squashed mean head.
    SacActor {
        actor: MlpParams,
        normalizer: RunningNormalizer,
    },
    /// Receding-horizon planner: replans every `replan_period` control
    /// steps and applies the planned wrench under zero-order hold.
    MpcReceding { plan: Option<TrajectoryPlan> },
    /// Scripted oracle: plans once at episode start and replays the plan
    /// open loop (zero wrench beyond the horizon).
    PlanReplay { plan: Option<TrajectoryPlan> },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Null => "null",
            Policy::PpoActor { .. } => "ppo",
            Policy::SacActor { .. } => "sac",
            Policy::MpcReceding { .. } => "mpc-only",
            Policy::PlanReplay { .. } => "oracle",
        }
    }

    /// Prepares per-episode state (the planner policies compute their
    /// initial plan here).
    pub fn begin_episode(&mut self, ctx: &EpisodeContext) -> Result<()> {
        match self {
            Policy::MpcReceding { plan } | Policy::PlanReplay { plan } => {
                *plan = Some(plan_from(&ctx.scenario, &ctx.state, ctx.t)?);
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Raw action in `[-1, 1]^m` for the current context.
    pub fn act(&mut self, ctx: &EpisodeContext) -> Result<DVector<f64>> {
        let mode = ctx.scenario.mode;
        let force_limit = ctx.scenario.spacecraft.force_limit;
        let torque_limit = ctx.scenario.spacecraft.torque_limit;
        match self {
            Policy::Null => Ok(DVector::zeros(mode.act_dim())),
            Policy::PpoActor { actor, normalizer } => {
                let obs = normalizer.normalize(&ctx.observe())?;
                Ok(clip_action(&actor.infer(&obs)?))
            }
            Policy::SacActor { actor, normalizer } => {
                let obs = normalizer.normalize(&ctx.observe())?;
                let out = actor.infer(&obs)?;
                let m = out.len() / 2;
                Ok(DVector::from_fn(m, |i, _| out[i].tanh()))
            }
            Policy::MpcReceding { plan } => {
                let replan = ctx.scenario.mpc.replan_period;
                if ctx.step_count > 0 && ctx.step_count % replan == 0 {
                    *plan = Some(plan_from(&ctx.scenario, &ctx.state, ctx.t)?);
                }
                let plan = plan
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParam("planner policy not initialized".into()))?;
                let u = plan.control_at(ctx.t);
                Ok(wrench_to_raw(&u, mode, force_limit, torque_limit))
            }
            Policy::PlanReplay { plan } => {
                let plan = plan
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParam("oracle policy not initialized".into()))?;
                let u = plan.control_at(ctx.t);
                Ok(wrench_to_raw(&u, mode, force_limit, torque_limit))
            }
        }
    }
}
