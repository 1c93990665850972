//! Diagonal Gaussian policy heads and action scaling.
//!
//! Two constructions share the sampling core: the on-policy head draws an
//! unsquashed Gaussian whose sample is clipped to the action box afterward
//! (the log-density is that of the pre-clip draw), and the off-policy head
//! squashes the draw through tanh with the exact log-density correction.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::ControlInput;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

fn check_std(std: &DVector<f64>) -> Result<()> {
    if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParam("standard deviation must be positive".into()));
    }
    Ok(())
}

/// Log density of a diagonal Gaussian at `x`.
pub fn diag_gaussian_log_prob(mean: &DVector<f64>, std: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let mut lp = 0.0;
    for i in 0..mean.len() {
        let z = (x[i] - mean[i]) / std[i];
        lp += -0.5 * LN_2PI - std[i].ln() - 0.5 * z * z;
    }
    lp
}

/// Draws from a diagonal Gaussian; returns the sample and its log density.
pub fn sample_diag_gaussian<R: Rng>(
    mean: &DVector<f64>,
    std: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, f64)> {
    check_std(std)?;
    if mean.len() != std.len() {
        return Err(Error::Dimension("mean/std length mismatch".into()));
    }
    let sample = DVector::from_fn(mean.len(), |i, _| {
        mean[i] + std[i] * rng.sample::<f64, _>(StandardNormal)
    });
    let lp = diag_gaussian_log_prob(mean, std, &sample);
    Ok((sample, lp))
}

/// `log(1 - tanh(u)^2)` in the overflow-safe form
/// `2 (ln 2 - u - softplus(-2u))`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let sp = {
        let x = -2.0 * u;
        if x > 0.0 {
            x + (-x).exp().ln_1p()
        } else {
            x.exp().ln_1p()
        }
    };
    2.0 * (std::f64::consts::LN_2 - u - sp)
}

/// Log density of the tanh-squashed Gaussian evaluated at the pre-squash
/// value `u` (the squashed action is `tanh(u)`).
pub fn squashed_log_prob(mean: &DVector<f64>, std: &DVector<f64>, pre_tanh: &DVector<f64>) -> f64 {
    let mut lp = diag_gaussian_log_prob(mean, std, pre_tanh);
    for i in 0..pre_tanh.len() {
        lp -= log_one_minus_tanh_sq(pre_tanh[i]);
    }
    lp
}

/// A tanh-squashed Gaussian draw with its exact log density.
#[derive(Debug, Clone)]
pub struct SquashedSample {
    /// Gaussian draw before squashing.
    pub pre_tanh: DVector<f64>,
    /// Standard-normal noise used for the draw (for reparameterized
    /// gradients).
    pub noise: DVector<f64>,
    /// Action in `[-1, 1]^m`.
    pub action: DVector<f64>,
    pub log_prob: f64,
}

/// Draws a squashed-Gaussian action.
pub fn sample_squashed_gaussian<R: Rng>(
    mean: &DVector<f64>,
    std: &DVector<f64>,
    rng: &mut R,
) -> Result<SquashedSample> {
    check_std(std)?;
    if mean.len() != std.len() {
        return Err(Error::Dimension("mean/std length mismatch".into()));
    }
    let noise = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(squash_with_noise(mean, std, &noise))
}

/// Deterministic squashed sample from explicit noise (the
/// reparameterization path used by training updates).
pub fn squash_with_noise(
    mean: &DVector<f64>,
    std: &DVector<f64>,
    noise: &DVector<f64>,
) -> SquashedSample {
    let pre_tanh = DVector::from_fn(mean.len(), |i, _| mean[i] + std[i] * noise[i]);
    let action = pre_tanh.map(f64::tanh);
    let log_prob = squashed_log_prob(mean, std, &pre_tanh);
    SquashedSample {
        pre_tanh,
        noise: noise.clone(),
        action,
        log_prob,
    }
}

/// Deterministic squashed action (the zero-noise limit).
pub fn squash_deterministic(mean: &DVector<f64>) -> DVector<f64> {
    mean.map(f64::tanh)
}

/// Clips an unsquashed draw to the normalized action box.
pub fn clip_action(action: &DVector<f64>) -> DVector<f64> {
    action.map(|a| a.clamp(-1.0, 1.0))
}

/// Maps a normalized action in `[-1, 1]^m` onto the physical wrench box.
/// Values outside the box are clamped first. A 6-vector maps to all axes;
/// a 3-vector is the planar embedding `[f_x f_y tau_z]`.
pub fn scale_action(raw: &DVector<f64>, force_limit: f64, torque_limit: f64) -> Result<ControlInput> {
    if !(force_limit > 0.0) || !(torque_limit > 0.0) {
        return Err(Error::InvalidParam("wrench limits must be positive".into()));
    }
    let clip = |x: f64| x.clamp(-1.0, 1.0);
    match raw.len() {
        6 => Ok(ControlInput {
            force: Vector3::new(
                clip(raw[0]) * force_limit,
                clip(raw[1]) * force_limit,
                clip(raw[2]) * force_limit,
            ),
            torque: Vector3::new(
                clip(raw[3]) * torque_limit,
                clip(raw[4]) * torque_limit,
                clip(raw[5]) * torque_limit,
            ),
        }),
        3 => Ok(ControlInput {
            force: Vector3::new(clip(raw[0]) * force_limit, clip(raw[1]) * force_limit, 0.0),
            torque: Vector3::new(0.0, 0.0, clip(raw[2]) * torque_limit),
        }),
        other => Err(Error::Dimension(format!(
            "action must have 3 or 6 components, got {other}"
        ))),
    }
}
