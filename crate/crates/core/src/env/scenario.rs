//! Scenario configuration: file schema, validation, and bundled presets.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};
use serde::Deserialize;

use crate::dynamics::{SpacecraftParams, StateVector, CONTROL_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::mpc::{ConstraintSet, HorizonConfig};
use crate::ppo::PpoConfig;
use crate::sac::SacConfig;
use crate::slosh::{fill_to_params, SloshParams};

/// Degrees of freedom exposed to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    /// Planar translation plus yaw: observation `[x y yaw vx vy wz]`,
    /// action `[fx fy tau_z]`.
    Planar,
    /// Full six degrees of freedom: 13-component observation, 6-axis
    /// wrench action.
    Docking,
}

impl ControlMode {
    pub fn obs_dim(&self) -> usize {
        match self {
            ControlMode::Planar => 6,
            ControlMode::Docking => STATE_DIM,
        }
    }

    pub fn act_dim(&self) -> usize {
        match self {
            ControlMode::Planar => 3,
            ControlMode::Docking => CONTROL_DIM,
        }
    }

    pub fn error_dim(&self) -> usize {
        match self {
            ControlMode::Planar => 3,
            ControlMode::Docking => 12,
        }
    }
}

/// Axis-aligned admissible region in RSW coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub lower: Vector3<f64>,
    pub upper: Vector3<f64>,
}

impl Zone {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.lower[i] && p[i] <= self.upper[i])
    }
}

/// Success tolerances; angles in degrees as configured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizationCriteria {
    pub pos_tol: f64,
    pub vel_tol: f64,
    pub att_tol_deg: f64,
    pub rate_tol_deg: f64,
}

impl StabilizationCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.pos_tol > 0.0 && self.vel_tol > 0.0 && self.att_tol_deg > 0.0 && self.rate_tol_deg > 0.0)
        {
            return Err(Error::Config("stabilization tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Reward weights; the quadratic weights are diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardWeights {
    pub control_weight: DVector<f64>,
    pub state_error_weight: DVector<f64>,
    pub rot_bonus: f64,
    pub pos_bonus: f64,
    pub slosh_force_weight: f64,
    pub slosh_torque_weight: f64,
    pub k0: f64,
    pub k1: f64,
}

impl RewardWeights {
    pub fn validate(&self, mode: ControlMode) -> Result<()> {
        if self.control_weight.len() != mode.act_dim() {
            return Err(Error::Config(format!(
                "control_weight needs {} entries",
                mode.act_dim()
            )));
        }
        if self.state_error_weight.len() != mode.error_dim() {
            return Err(Error::Config(format!(
                "state_error_weight needs {} entries",
                mode.error_dim()
            )));
        }
        if self.control_weight.iter().any(|&w| w < 0.0)
            || self.state_error_weight.iter().any(|&w| w < 0.0)
        {
            return Err(Error::Config("quadratic weights must be nonnegative".into()));
        }
        if !(self.rot_bonus > 0.0 && self.pos_bonus > 0.0) {
            return Err(Error::Config("bonus magnitudes must be positive".into()));
        }
        if self.slosh_force_weight < 0.0 || self.slosh_torque_weight < 0.0 {
            return Err(Error::Config("slosh weights must be nonnegative".into()));
        }
        if !(self.k0 > 0.0) || self.k1 < 0.0 {
            return Err(Error::Config(
                "bonus schedule needs k0 > 0 and k1 >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Planner settings: horizon grid, weights, replanning cadence, solver.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSettings {
    pub horizon_steps: usize,
    pub horizon_dt: f64,
    pub state_weight: DVector<f64>,
    pub input_weight: DVector<f64>,
    pub terminal_weight: DVector<f64>,
    /// Control steps between replans when the planner acts as the
    /// controller.
    pub replan_period: usize,
    /// Control steps between reference replans during shaped training;
    /// zero keeps the reset-time plan for the whole episode.
    pub shaping_replan_period: usize,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl MpcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_steps == 0 || !(self.horizon_dt > 0.0) {
            return Err(Error::Config("mpc horizon must be positive".into()));
        }
        if self.state_weight.len() != STATE_DIM
            || self.terminal_weight.len() != STATE_DIM
            || self.input_weight.len() != CONTROL_DIM
        {
            return Err(Error::Config(format!(
                "mpc weights need {STATE_DIM} state and {CONTROL_DIM} input entries"
            )));
        }
        if self.replan_period == 0 {
            return Err(Error::Config("replan_period must be positive".into()));
        }
        if !(self.solver_tol > 0.0) || self.solver_max_iter == 0 {
            return Err(Error::Config("solver settings must be positive".into()));
        }
        Ok(())
    }
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub mode: ControlMode,
    pub control_period: f64,
    /// Training episode cap, seconds.
    pub time_limit: f64,
    /// Evaluation episode cap, seconds (defaults to the training cap).
    pub eval_time_limit: f64,
    pub zone: Zone,
    pub keep_out_radius: f64,
    pub goal: StateVector,
    pub stabilization: StabilizationCriteria,
    pub spacecraft: SpacecraftParams,
    pub slosh: Option<SloshParams>,
    pub rewards: RewardWeights,
    pub mpc: MpcSettings,
    pub ppo: PpoConfig,
    pub sac: SacConfig,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_period > 0.0) {
            return Err(Error::Config("control_period must be positive".into()));
        }
        if !(self.time_limit > 0.0) || !(self.eval_time_limit > 0.0) {
            return Err(Error::Config("episode limits must be positive".into()));
        }
        for i in 0..3 {
            if self.zone.lower[i] > self.zone.upper[i] {
                return Err(Error::Config("zone lower bound exceeds upper".into()));
            }
        }
        if self.keep_out_radius < 0.0 {
            return Err(Error::Config("keep_out_radius must be >= 0".into()));
        }
        if !self.zone.contains(&self.goal.rel_pos) {
            return Err(Error::Config("goal must lie inside the admissible zone".into()));
        }
        self.stabilization.validate()?;
        self.spacecraft.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(slosh) = &self.slosh {
            slosh.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.rewards.validate(self.mode)?;
        self.mpc.validate()?;
        self.ppo.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.sac.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Step budget of one episode.
    pub fn max_steps(&self, eval: bool) -> usize {
        let limit = if eval { self.eval_time_limit } else { self.time_limit };
        (limit / self.control_period).round() as usize
    }

    /// Replaces the slosh participating mass via the tank-fill rule,
    /// keeping the configured frequency, damping, and geometry.
    pub fn apply_fill(&mut self, fill_fraction: f64) -> Result<()> {
        let current = self.slosh.clone().ok_or_else(|| {
            Error::Config("scenario has no slosh section to apply a fill level to".into())
        })?;
        let filled = fill_to_params(fill_fraction, current.tank_radius, current.fluid_density)?;
        self.slosh = Some(SloshParams {
            fuel_mass: filled.fuel_mass,
            ..current
        });
        Ok(())
    }

    /// Horizon configuration for the planner (diagonal weights expanded).
    pub fn horizon_config(&self) -> HorizonConfig {
        HorizonConfig {
            steps: self.mpc.horizon_steps,
            dt: self.mpc.horizon_dt,
            state_weight: DMatrix::from_diagonal(&self.mpc.state_weight),
            input_weight: DMatrix::from_diagonal(&self.mpc.input_weight),
            terminal_weight: DMatrix::from_diagonal(&self.mpc.terminal_weight),
        }
    }

    /// Constraint set for the planner. The keep-out radius is supplied by
    /// the caller because it is gated on attitude alignment.
    pub fn constraint_set(&self, keep_out_radius: f64) -> ConstraintSet {
        let mut state_lower = DVector::from_element(STATE_DIM, f64::NEG_INFINITY);
        let mut state_upper = DVector::from_element(STATE_DIM, f64::INFINITY);
        for i in 0..3 {
            state_lower[i] = self.zone.lower[i];
            state_upper[i] = self.zone.upper[i];
        }
        let mut input_lower = DVector::zeros(CONTROL_DIM);
        let mut input_upper = DVector::zeros(CONTROL_DIM);
        for i in 0..3 {
            input_lower[i] = -self.spacecraft.force_limit;
            input_upper[i] = self.spacecraft.force_limit;
            input_lower[3 + i] = -self.spacecraft.torque_limit;
            input_upper[3 + i] = self.spacecraft.torque_limit;
        }
        if self.mode == ControlMode::Planar {
            // Planar actuation: no cross-track force, yaw torque only.
            input_lower[2] = 0.0;
            input_upper[2] = 0.0;
            for i in 3..5 {
                input_lower[i] = 0.0;
                input_upper[i] = 0.0;
            }
        }
        ConstraintSet {
            state_lower,
            state_upper,
            input_lower,
            input_upper,
            keep_out_radius,
        }
    }

    /// Loads and validates a scenario from a TOML string.
    pub fn from_toml_str(name_hint: &str, text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text)
            .map_err(|e| Error::Config(format!("scenario parse error: {e}")))?;
        let config = raw.into_config(name_hint)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scenario")
            .to_string();
        Self::from_toml_str(&name, &text)
    }

    /// Bundled preset source by name.
    pub fn preset_source(name: &str) -> Option<&'static str> {
        match name {
            "planar_lab" => Some(include_str!("../../presets/planar_lab.toml")),
            "leo_docking" => Some(include_str!("../../presets/leo_docking.toml")),
            _ => None,
        }
    }

    /// Resolves a preset name or file path; returns the config and the
    /// raw text it was parsed from (for hashing into output headers).
    pub fn resolve(name_or_path: &str) -> Result<(Self, String)> {
        if let Some(source) = Self::preset_source(name_or_path) {
            return Ok((Self::from_toml_str(name_or_path, source)?, source.to_string()));
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("scenario")
                .to_string();
            return Ok((Self::from_toml_str(&name, &text)?, text));
        }
        Err(Error::Config(format!(
            "scenario '{name_or_path}' is neither a bundled preset nor a readable file"
        )))
    }
}

// ---------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    mode: String,
    episode: RawEpisode,
    spacecraft: RawSpacecraft,
    zone: RawZone,
    goal: RawGoal,
    stabilization: RawStabilization,
    slosh: Option<RawSlosh>,
    rewards: RawRewards,
    mpc: RawMpc,
    ppo: RawPpo,
    sac: RawSac,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEpisode {
    control_period: f64,
    time_limit: f64,
    eval_time_limit: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpacecraft {
    dry_mass: f64,
    inertia_diag: [f64; 3],
    orbital_rate: f64,
    force_limit: f64,
    torque_limit: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawZone {
    radial: [f64; 2],
    along_track: [f64; 2],
    cross_track: [f64; 2],
    keep_out_radius: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGoal {
    position: [f64; 3],
    yaw_deg: Option<f64>,
    quat: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStabilization {
    pos_tol: f64,
    vel_tol: f64,
    att_tol_deg: f64,
    rate_tol_deg: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlosh {
    fuel_mass: Option<f64>,
    fill_fraction: Option<f64>,
    tank_radius: f64,
    fluid_density: f64,
    natural_freq: f64,
    damping_ratio: f64,
    attach_offset: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRewards {
    control_weight: Vec<f64>,
    state_error_weight: Vec<f64>,
    rot_bonus: f64,
    pos_bonus: f64,
    slosh_force_weight: f64,
    slosh_torque_weight: f64,
    k0: f64,
    k1: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMpc {
    horizon_steps: usize,
    horizon_dt: f64,
    state_weight: Vec<f64>,
    input_weight: Vec<f64>,
    terminal_weight: Vec<f64>,
    replan_period: usize,
    shaping_replan_period: usize,
    solver_tol: f64,
    solver_max_iter: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPpo {
    discount: f64,
    clip: f64,
    kl_target: f64,
    actor_lr: f64,
    critic_lr: f64,
    batch_episodes: usize,
    epochs_per_batch: usize,
    minibatch: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSac {
    discount: f64,
    entropy_coeff: f64,
    soft_rate: f64,
    actor_lr: f64,
    critic_lr: f64,
    buffer_capacity: usize,
    batch_size: usize,
    update_every: usize,
    warmup_steps: usize,
}

impl RawScenario {
    fn into_config(self, name: &str) -> Result<ScenarioConfig> {
        let mode = match self.mode.as_str() {
            "planar" => ControlMode::Planar,
            "docking" => ControlMode::Docking,
            other => {
                return Err(Error::Config(format!(
                    "mode must be 'planar' or 'docking', got '{other}'"
                )))
            }
        };

        let goal_quat = match (self.goal.quat, self.goal.yaw_deg) {
            (Some(q), _) => Vector4::from_column_slice(&q),
            (None, Some(yaw)) => {
                let half = 0.5 * yaw.to_radians();
                Vector4::new(0.0, 0.0, half.sin(), half.cos())
            }
            (None, None) => Vector4::new(0.0, 0.0, 0.0, 1.0),
        };
        let mut goal = StateVector::rest();
        goal.rel_pos = Vector3::from_column_slice(&self.goal.position);
        goal.quat = goal_quat;
        goal.renormalize_quat()
            .map_err(|_| Error::Config("goal quaternion is degenerate".into()))?;

        let slosh = match self.slosh {
            None => None,
            Some(raw) => {
                let fuel_mass = match (raw.fuel_mass, raw.fill_fraction) {
                    // An explicit mass wins over the fill rule.
                    (Some(m), _) => m,
                    (None, Some(fill)) => {
                        fill_to_params(fill, raw.tank_radius, raw.fluid_density)?.fuel_mass
                    }
                    (None, None) => {
                        return Err(Error::Config(
                            "slosh section needs fuel_mass or fill_fraction".into(),
                        ))
                    }
                };
                Some(SloshParams {
                    fuel_mass,
                    attach_offset: Vector3::from_column_slice(&raw.attach_offset),
                    natural_freq: raw.natural_freq,
                    damping_ratio: raw.damping_ratio,
                    tank_radius: raw.tank_radius,
                    fluid_density: raw.fluid_density,
                })
            }
        };

        Ok(ScenarioConfig {
            name: name.to_string(),
            mode,
            control_period: self.episode.control_period,
            time_limit: self.episode.time_limit,
            eval_time_limit: self.episode.eval_time_limit.unwrap_or(self.episode.time_limit),
            zone: Zone {
                lower: Vector3::new(
                    self.zone.radial[0],
                    self.zone.along_track[0],
                    self.zone.cross_track[0],
                ),
                upper: Vector3::new(
                    self.zone.radial[1],
                    self.zone.along_track[1],
                    self.zone.cross_track[1],
                ),
            },
            keep_out_radius: self.zone.keep_out_radius,
            goal,
            stabilization: StabilizationCriteria {
                pos_tol: self.stabilization.pos_tol,
                vel_tol: self.stabilization.vel_tol,
                att_tol_deg: self.stabilization.att_tol_deg,
                rate_tol_deg: self.stabilization.rate_tol_deg,
            },
            spacecraft: SpacecraftParams {
                dry_mass: self.spacecraft.dry_mass,
                inertia: Matrix3::from_diagonal(&Vector3::from_column_slice(
                    &self.spacecraft.inertia_diag,
                )),
                orbital_rate: self.spacecraft.orbital_rate,
                force_limit: self.spacecraft.force_limit,
                torque_limit: self.spacecraft.torque_limit,
            },
            slosh,
            rewards: RewardWeights {
                control_weight: DVector::from_vec(self.rewards.control_weight),
                state_error_weight: DVector::from_vec(self.rewards.state_error_weight),
                rot_bonus: self.rewards.rot_bonus,
                pos_bonus: self.rewards.pos_bonus,
                slosh_force_weight: self.rewards.slosh_force_weight,
                slosh_torque_weight: self.rewards.slosh_torque_weight,
                k0: self.rewards.k0,
                k1: self.rewards.k1,
            },
            mpc: MpcSettings {
                horizon_steps: self.mpc.horizon_steps,
                horizon_dt: self.mpc.horizon_dt,
                state_weight: DVector::from_vec(self.mpc.state_weight),
                input_weight: DVector::from_vec(self.mpc.input_weight),
                terminal_weight: DVector::from_vec(self.mpc.terminal_weight),
                replan_period: self.mpc.replan_period,
                shaping_replan_period: self.mpc.shaping_replan_period,
                solver_tol: self.mpc.solver_tol,
                solver_max_iter: self.mpc.solver_max_iter,
            },
            ppo: PpoConfig {
                discount: self.ppo.discount,
                clip: self.ppo.clip,
                kl_target: self.ppo.kl_target,
                actor_lr: self.ppo.actor_lr,
                critic_lr: self.ppo.critic_lr,
                batch_episodes: self.ppo.batch_episodes,
                epochs_per_batch: self.ppo.epochs_per_batch,
                minibatch: self.ppo.minibatch,
            },
            sac: SacConfig {
                discount: self.sac.discount,
                entropy_coeff: self.sac.entropy_coeff,
                soft_rate: self.sac.soft_rate,
                actor_lr: self.sac.actor_lr,
                critic_lr: self.sac.critic_lr,
                buffer_capacity: self.sac.buffer_capacity,
                batch_size: self.sac.batch_size,
                update_every: self.sac.update_every,
                warmup_steps: self.sac.warmup_steps,
            },
        })
    }
}
