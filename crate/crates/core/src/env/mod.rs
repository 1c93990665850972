//! The docking MDP: episode reset and stepping over the coupled
//! rigid-body and slosh dynamics, both reward functions, and the
//! stabilization / admissible-zone / keep-out rules.

pub mod reward;
pub mod scenario;

use std::sync::Arc;

use nalgebra::{DVector, Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{integrate_step, ControlInput, Disturbance, StateVector};
use crate::error::{Error, Result};
use crate::mpc::{plan_trajectory_with, reference_lookup, TrajectoryPlan};
use crate::nn::scale_action;
use crate::slosh::{slosh_step, SloshState};

pub use reward::{error_coords, k_schedule, reward_mpc, reward_standalone};
pub use scenario::{
    ControlMode, MpcSettings, RewardWeights, ScenarioConfig, StabilizationCriteria, Zone,
};

/// Consecutive in-tolerance control steps required to declare success.
pub const STABILIZATION_DWELL_STEPS: usize = 10;
/// Dynamics substeps per control period.
pub const SUBSTEPS_PER_CONTROL: usize = 10;
/// Attempt cap for rejection-sampling the initial position.
const RESET_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationCause {
    Stabilized,
    ZoneExit,
    KeepoutViolation,
    TimeLimit,
}

impl TerminationCause {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationCause::Stabilized => "stabilized",
            TerminationCause::ZoneExit => "zone-exit",
            TerminationCause::KeepoutViolation => "keepout-violation",
            TerminationCause::TimeLimit => "time-limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZoneStatus {
    Ok,
    ZoneExit,
    KeepoutViolation,
}

/// Per-step annotations riding along with a transition.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub slosh_force: Vector3<f64>,
    pub slosh_torque: Vector3<f64>,
    pub mpc_reference: Option<StateVector>,
    pub standalone_reward: f64,
}

/// One environment transition.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: StateVector,
    /// Raw policy output, already clamped to `[-1, 1]`.
    pub action_raw: DVector<f64>,
    /// Physical wrench applied over the step.
    pub action_wrench: ControlInput,
    pub reward: f64,
    pub next_state: StateVector,
    pub done: bool,
    pub cause: Option<TerminationCause>,
    pub info: StepInfo,
}

/// Owned state of one running episode.
#[derive(Debug, Clone)]
pub struct EpisodeContext {
    pub scenario: Arc<ScenarioConfig>,
    pub state: StateVector,
    pub slosh_state: SloshState,
    prev_slosh_force: Vector3<f64>,
    pub t: f64,
    pub step_count: usize,
    pub max_steps: usize,
    dwell: usize,
    pub done: Option<TerminationCause>,
    /// Reference plan for reward shaping, when active.
    pub plan: Option<TrajectoryPlan>,
    pub shaping: bool,
    pub rng: ChaCha8Rng,
}

impl EpisodeContext {
    pub fn is_done(&self) -> bool {
        self.done.is_some()
    }

    /// Raw (unnormalized) observation for the controller.
    pub fn observe(&self) -> DVector<f64> {
        observe_state(&self.state, self.scenario.mode)
    }
}

/// Observation vector per mode: planar `[x y yaw vx vy wz]`, full the raw
/// 13-component state.
pub fn observe_state(state: &StateVector, mode: ControlMode) -> DVector<f64> {
    match mode {
        ControlMode::Planar => DVector::from_column_slice(&[
            state.rel_pos[0],
            state.rel_pos[1],
            state.yaw(),
            state.rel_vel[0],
            state.rel_vel[1],
            state.ang_vel[2],
        ]),
        ControlMode::Docking => {
            DVector::from_column_slice(state.to_vector().as_slice())
        }
    }
}

/// Instantaneous stabilization test (the dwell requirement lives in the
/// episode loop).
pub fn stabilization_check(
    state: &StateVector,
    goal: &StateVector,
    criteria: &StabilizationCriteria,
) -> bool {
    state.position_error_to(goal) < criteria.pos_tol
        && (state.rel_vel - goal.rel_vel).norm() < criteria.vel_tol
        && state.attitude_angle_to(goal).to_degrees() < criteria.att_tol_deg
        && (state.ang_vel - goal.ang_vel).norm().to_degrees() < criteria.rate_tol_deg
}

/// Admissible-zone and keep-out status. The keep-out sphere applies until
/// the attitude aligns with the goal, after which final approach is
/// permitted.
pub fn zone_and_keepout_check(state: &StateVector, scenario: &ScenarioConfig) -> ZoneStatus {
    if !scenario.zone.contains(&state.rel_pos) {
        return ZoneStatus::ZoneExit;
    }
    if scenario.keep_out_radius > 0.0 && state.rel_pos.norm() < scenario.keep_out_radius {
        let aligned = state.attitude_angle_to(&scenario.goal).to_degrees()
            < scenario.stabilization.att_tol_deg;
        if !aligned {
            return ZoneStatus::KeepoutViolation;
        }
    }
    ZoneStatus::Ok
}

fn sample_initial_position(scenario: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vector3<f64>> {
    let zone = &scenario.zone;
    for _ in 0..RESET_ATTEMPTS {
        let p = Vector3::from_fn(|i, _| {
            if zone.upper[i] > zone.lower[i] {
                rng.gen_range(zone.lower[i]..zone.upper[i])
            } else {
                zone.lower[i]
            }
        });
        if scenario.keep_out_radius == 0.0 || p.norm() >= scenario.keep_out_radius {
            return Ok(p);
        }
    }
    Err(Error::Config(
        "could not draw an initial position outside the keep-out sphere".into(),
    ))
}

fn sample_initial_attitude(mode: ControlMode, rng: &mut ChaCha8Rng) -> Vector4<f64> {
    match mode {
        ControlMode::Planar => {
            let yaw: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            Vector4::new(0.0, 0.0, (0.5 * yaw).sin(), (0.5 * yaw).cos())
        }
        ControlMode::Docking => {
            // Normalized 4-normal draw: uniform over the rotation group.
            let mut q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            while q.norm() < 1e-6 {
                q = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            }
            q / q.norm()
        }
    }
}

/// Clearance past the keep-out radius for the misaligned hold point.
pub const KEEPOUT_HOLD_MARGIN: f64 = 0.5;

/// Plans the shaping/controller reference from the given state. Once the
/// attitude is aligned the keep-out constraint is dropped and the plan
/// aims at the docking goal (the final approach corridor). While
/// misaligned, the plan instead targets a hold point just outside the
/// keep-out sphere along the current bearing, with the goal attitude, so
/// the reference acquires alignment before closing in.
pub fn plan_from(
    scenario: &ScenarioConfig,
    state: &StateVector,
    start_time: f64,
) -> Result<TrajectoryPlan> {
    let aligned = state.attitude_angle_to(&scenario.goal).to_degrees()
        < scenario.stabilization.att_tol_deg;
    let mut goal = scenario.goal;
    let mut keep_out = 0.0;
    if !aligned && scenario.keep_out_radius > 0.0 {
        keep_out = scenario.keep_out_radius;
        let hold_distance = scenario.keep_out_radius + KEEPOUT_HOLD_MARGIN;
        let offset = state.rel_pos - scenario.goal.rel_pos;
        let bearing = if offset.norm() > 1e-9 {
            offset / offset.norm()
        } else {
            Vector3::x()
        };
        goal.rel_pos = scenario.goal.rel_pos + bearing * hold_distance;
    }
    plan_trajectory_with(
        state,
        &goal,
        &scenario.spacecraft,
        &scenario.horizon_config(),
        &scenario.constraint_set(keep_out),
        start_time,
        scenario.mpc.solver_tol,
        scenario.mpc.solver_max_iter,
    )
}

/// Starts a fresh episode: position uniform over the admissible zone
/// (respecting the keep-out sphere), attitude uniform per mode, zero
/// initial velocities and quiescent fuel. Computes the initial reference
/// plan when reward shaping is active.
pub fn reset(
    scenario: Arc<ScenarioConfig>,
    shaping: bool,
    eval_limits: bool,
    mut rng: ChaCha8Rng,
) -> Result<EpisodeContext> {
    let mut state = StateVector::rest();
    state.rel_pos = sample_initial_position(&scenario, &mut rng)?;
    state.quat = sample_initial_attitude(scenario.mode, &mut rng);

    let plan = if shaping {
        Some(plan_from(&scenario, &state, 0.0)?)
    } else {
        None
    };

    let max_steps = scenario.max_steps(eval_limits);
    Ok(EpisodeContext {
        scenario,
        state,
        slosh_state: SloshState::zero(),
        prev_slosh_force: Vector3::zeros(),
        t: 0.0,
        step_count: 0,
        max_steps,
        dwell: 0,
        done: None,
        plan,
        shaping,
        rng,
    })
}

/// Starts an episode from an explicit state (trace replay and tests).
pub fn reset_from_state(
    scenario: Arc<ScenarioConfig>,
    state: StateVector,
    shaping: bool,
    eval_limits: bool,
    rng: ChaCha8Rng,
) -> Result<EpisodeContext> {
    let mut ctx = reset(scenario, false, eval_limits, rng)?;
    ctx.state = state;
    ctx.shaping = shaping;
    ctx.plan = if shaping {
        Some(plan_from(&ctx.scenario, &state, 0.0)?)
    } else {
        None
    };
    Ok(ctx)
}

/// Advances one control period: scales the action onto the wrench box,
/// substep-integrates the rigid-body and slosh dynamics under zero-order
/// hold, computes the active reward, and evaluates termination.
pub fn step(ctx: &mut EpisodeContext, raw_action: &DVector<f64>) -> Result<Transition> {
    if ctx.is_done() {
        return Err(Error::EpisodeFinished);
    }
    let scenario = ctx.scenario.clone();
    if raw_action.len() != scenario.mode.act_dim() {
        return Err(Error::Dimension(format!(
            "action needs {} axes, got {}",
            scenario.mode.act_dim(),
            raw_action.len()
        )));
    }
    if !raw_action.iter().all(|a| a.is_finite()) {
        return Err(Error::NonFinite("environment action"));
    }
    let clamped = raw_action.map(|a| a.clamp(-1.0, 1.0));
    let wrench = scale_action(
        &clamped,
        scenario.spacecraft.force_limit,
        scenario.spacecraft.torque_limit,
    )?;

    let state_before = ctx.state;
    let dt = scenario.control_period / SUBSTEPS_PER_CONTROL as f64;
    let mut disturbance = Disturbance::zero();
    for _ in 0..SUBSTEPS_PER_CONTROL {
        if let Some(slosh_params) = &scenario.slosh {
            // Thrust-driven excitation with the previous substep's slosh
            // reaction fed back; orbital accelerations are negligible at
            // this scale.
            let body_accel =
                (wrench.force + ctx.prev_slosh_force) / scenario.spacecraft.dry_mass;
            let (next_slosh, dist) = slosh_step(
                &ctx.slosh_state,
                &body_accel,
                &ctx.state.ang_vel,
                slosh_params,
                dt,
            )?;
            ctx.slosh_state = next_slosh;
            ctx.prev_slosh_force = dist.force;
            disturbance = dist;
        }
        ctx.state = integrate_step(&ctx.state, &wrench, &disturbance, &scenario.spacecraft, dt)?;
    }
    ctx.t += scenario.control_period;
    ctx.step_count += 1;

    // Optional reference replan during shaped training.
    if ctx.shaping
        && scenario.mpc.shaping_replan_period > 0
        && ctx.step_count % scenario.mpc.shaping_replan_period == 0
    {
        ctx.plan = Some(plan_from(&scenario, &ctx.state, ctx.t)?);
    }

    let standalone = reward_standalone(
        &ctx.state,
        &clamped,
        &disturbance,
        ctx.t,
        &scenario.rewards,
        &scenario.goal,
    )?;
    let (total_reward, mpc_reference) = if ctx.shaping {
        let plan = ctx
            .plan
            .as_ref()
            .ok_or_else(|| Error::InvalidParam("shaping active without a plan".into()))?;
        let reference = reference_lookup(plan, ctx.t);
        let r = reward_mpc(
            &ctx.state,
            &reference,
            &clamped,
            &disturbance,
            ctx.t,
            &scenario.rewards,
            &scenario.goal,
            scenario.mode,
        )?;
        (r, Some(reference))
    } else {
        (standalone, None)
    };

    // Termination: hard geometry violations dominate, then the
    // stabilization dwell, then the time limit.
    let mut cause = None;
    match zone_and_keepout_check(&ctx.state, &scenario) {
        ZoneStatus::ZoneExit => cause = Some(TerminationCause::ZoneExit),
        ZoneStatus::KeepoutViolation => cause = Some(TerminationCause::KeepoutViolation),
        ZoneStatus::Ok => {
            if stabilization_check(&ctx.state, &scenario.goal, &scenario.stabilization) {
                ctx.dwell += 1;
                if ctx.dwell >= STABILIZATION_DWELL_STEPS {
                    cause = Some(TerminationCause::Stabilized);
                }
            } else {
                ctx.dwell = 0;
            }
            if cause.is_none() && ctx.step_count >= ctx.max_steps {
                cause = Some(TerminationCause::TimeLimit);
            }
        }
    }
    ctx.done = cause;

    Ok(Transition {
        state: state_before,
        action_raw: clamped,
        action_wrench: wrench,
        reward: total_reward,
        next_state: ctx.state,
        done: cause.is_some(),
        cause,
        info: StepInfo {
            slosh_force: disturbance.force,
            slosh_torque: disturbance.torque,
            mpc_reference,
            standalone_reward: standalone,
        },
    })
}
