//! Equivalent-mechanical fuel-slosh surrogate.
//!
//! A lightly damped second-order oscillator per body axis stands in for the
//! first slosh mode: the participating fuel mass deflects against a spring
//! and damper when the vehicle accelerates, and the restoring force reacts
//! on the vehicle as a disturbance wrench.

use nalgebra::{SVector, Vector3};

use crate::dynamics::Disturbance;
use crate::error::{Error, Result};

/// Default slosh natural frequency, rad/s.
pub const DEFAULT_NATURAL_FREQ: f64 = 0.5;
/// Default slosh damping ratio.
pub const DEFAULT_DAMPING_RATIO: f64 = 0.05;
/// Default attachment offset along body z, meters.
pub const DEFAULT_ATTACH_OFFSET_M: f64 = 0.3;

/// Equivalent-mechanical slosh parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SloshParams {
    /// Participating slosh mass, kg.
    pub fuel_mass: f64,
    /// Attachment point of the slosh mass in the body frame, m.
    pub attach_offset: Vector3<f64>,
    /// Natural frequency of the slosh mode, rad/s.
    pub natural_freq: f64,
    /// Damping ratio, dimensionless.
    pub damping_ratio: f64,
    /// Tank radius, m.
    pub tank_radius: f64,
    /// Fluid density, kg/m^3.
    pub fluid_density: f64,
}

impl SloshParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fuel_mass >= 0.0) {
            return Err(Error::InvalidParam("fuel_mass must be >= 0".into()));
        }
        if !(self.natural_freq > 0.0) {
            return Err(Error::InvalidParam("natural_freq must be > 0".into()));
        }
        if !(self.damping_ratio >= 0.0 && self.damping_ratio < 1.0) {
            return Err(Error::InvalidParam("damping_ratio must be in [0, 1)".into()));
        }
        if !(self.tank_radius > 0.0) {
            return Err(Error::InvalidParam("tank_radius must be > 0".into()));
        }
        if !(self.fluid_density >= 0.0) {
            return Err(Error::InvalidParam("fluid_density must be >= 0".into()));
        }
        if !self.attach_offset.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("slosh attach_offset"));
        }
        Ok(())
    }
}

/// Internal state of the surrogate oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SloshState {
    /// Slosh-mass deflection, body frame, m.
    pub displacement: Vector3<f64>,
    /// Deflection rate, m/s.
    pub velocity: Vector3<f64>,
}

impl SloshState {
    pub fn zero() -> Self {
        Self {
            displacement: Vector3::zeros(),
            velocity: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.displacement
            .iter()
            .chain(self.velocity.iter())
            .all(|x| x.is_finite())
    }
}

fn oscillator_derivative(
    y: &SVector<f64, 6>,
    accel: &Vector3<f64>,
    params: &SloshParams,
) -> SVector<f64, 6> {
    let p: Vector3<f64> = y.fixed_rows::<3>(0).into();
    let v: Vector3<f64> = y.fixed_rows::<3>(3).into();
    let wn = params.natural_freq;
    let zeta = params.damping_ratio;
    let acc = -2.0 * zeta * wn * v - wn * wn * p - accel;
    let mut dy = SVector::<f64, 6>::zeros();
    dy.fixed_rows_mut::<3>(0).copy_from(&v);
    dy.fixed_rows_mut::<3>(3).copy_from(&acc);
    dy
}

/// Advances the oscillator one RK4 step under a constant body-frame
/// excitation and returns the resulting disturbance wrench.
///
/// The body rate is accepted for interface completeness but the surrogate
/// does not model rotational coupling of the fluid.
pub fn slosh_step(
    state: &SloshState,
    body_accel: &Vector3<f64>,
    ang_vel: &Vector3<f64>,
    params: &SloshParams,
    dt: f64,
) -> Result<(SloshState, Disturbance)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Integration(format!("slosh dt={dt} must be positive")));
    }
    if !state.is_finite()
        || !body_accel.iter().all(|x| x.is_finite())
        || !ang_vel.iter().all(|x| x.is_finite())
    {
        return Err(Error::NonFinite("slosh_step input"));
    }
    params.validate()?;

    let mut y = SVector::<f64, 6>::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(&state.displacement);
    y.fixed_rows_mut::<3>(3).copy_from(&state.velocity);

    let k1 = oscillator_derivative(&y, body_accel, params);
    let k2 = oscillator_derivative(&(y + 0.5 * dt * k1), body_accel, params);
    let k3 = oscillator_derivative(&(y + 0.5 * dt * k2), body_accel, params);
    let k4 = oscillator_derivative(&(y + dt * k3), body_accel, params);
    let y1 = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    let next = SloshState {
        displacement: y1.fixed_rows::<3>(0).into(),
        velocity: y1.fixed_rows::<3>(3).into(),
    };
    if !next.is_finite() {
        return Err(Error::Integration("slosh state went non-finite".into()));
    }
    Ok((next, disturbance_of(&next, params)))
}

/// Disturbance wrench for a given oscillator state: the spring and damper
/// reaction force applied at the (offset + deflected) attachment point.
pub fn disturbance_of(state: &SloshState, params: &SloshParams) -> Disturbance {
    let wn = params.natural_freq;
    let zeta = params.damping_ratio;
    let force =
        params.fuel_mass * (wn * wn * state.displacement + 2.0 * zeta * wn * state.velocity);
    let torque = (params.attach_offset + state.displacement).cross(&force);
    Disturbance { force, torque }
}

/// Participating fraction of the fluid mass as a function of fill level.
/// Near-empty tanks slosh almost entirely; near-full tanks barely at all.
pub fn participating_fraction(fill_fraction: f64) -> f64 {
    (1.0 - fill_fraction).clamp(0.2, 0.8)
}

/// Builds slosh parameters from a tank fill fraction using the spherical
/// tank volume and the participating-mass rule, with default frequency and
/// damping. An explicitly configured fuel mass takes precedence over this
/// pathway.
pub fn fill_to_params(fill_fraction: f64, tank_radius: f64, density: f64) -> Result<SloshParams> {
    if !(0.0..=1.0).contains(&fill_fraction) || !fill_fraction.is_finite() {
        return Err(Error::InvalidParam(format!(
            "fill_fraction {fill_fraction} outside [0, 1]"
        )));
    }
    if !(tank_radius > 0.0) || !(density >= 0.0) {
        return Err(Error::InvalidParam(
            "tank_radius must be > 0 and density >= 0".into(),
        ));
    }
    let total_fluid =
        fill_fraction * (4.0 / 3.0) * std::f64::consts::PI * tank_radius.powi(3) * density;
    let fuel_mass = if fill_fraction == 0.0 {
        0.0
    } else {
        total_fluid * participating_fraction(fill_fraction)
    };
    Ok(SloshParams {
        fuel_mass,
        attach_offset: Vector3::new(0.0, 0.0, DEFAULT_ATTACH_OFFSET_M),
        natural_freq: DEFAULT_NATURAL_FREQ,
        damping_ratio: DEFAULT_DAMPING_RATIO,
        tank_radius,
        fluid_density: density,
    })
}
