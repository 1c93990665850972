//! The two reward functions: the standalone shaping with sigmoid terminal
//! bonuses and slosh penalties, and the hybrid variant that additionally
//! penalizes deviation from the planner's reference trajectory.

use nalgebra::DVector;

use crate::dynamics::{quat_conjugate, quat_mul, Disturbance, StateVector};
use crate::error::{Error, Result};

use super::scenario::{ControlMode, RewardWeights};

/// Monotonically increasing bonus sharpness `k(t) = k0 + k1 t`.
pub fn k_schedule(weights: &RewardWeights, t: f64) -> f64 {
    weights.k0 + weights.k1 * t
}

/// Error coordinates between a state and a reference, per mode:
/// planar `[dx, dy, dyaw]`, full `[dpos(3), dvel(3), datt(3), drate(3)]`
/// with the attitude block the sign-canonicalized vector part of the
/// relative quaternion.
pub fn error_coords(state: &StateVector, reference: &StateVector, mode: ControlMode) -> DVector<f64> {
    match mode {
        ControlMode::Planar => {
            let mut yaw_err = state.yaw() - reference.yaw();
            while yaw_err > std::f64::consts::PI {
                yaw_err -= 2.0 * std::f64::consts::PI;
            }
            while yaw_err < -std::f64::consts::PI {
                yaw_err += 2.0 * std::f64::consts::PI;
            }
            DVector::from_column_slice(&[
                state.rel_pos[0] - reference.rel_pos[0],
                state.rel_pos[1] - reference.rel_pos[1],
                yaw_err,
            ])
        }
        ControlMode::Docking => {
            let rel = quat_mul(&state.quat, &quat_conjugate(&reference.quat));
            let sign = if rel[3] < 0.0 { -1.0 } else { 1.0 };
            let mut e = DVector::zeros(12);
            for i in 0..3 {
                e[i] = state.rel_pos[i] - reference.rel_pos[i];
                e[3 + i] = state.rel_vel[i] - reference.rel_vel[i];
                e[6 + i] = sign * rel[i];
                e[9 + i] = state.ang_vel[i] - reference.ang_vel[i];
            }
            e
        }
    }
}

fn sigmoid_bonus(magnitude: f64, error: f64, sharpness: f64) -> f64 {
    magnitude / (1.0 + (sharpness * error).exp())
}

fn quadratic_form(diag: &DVector<f64>, v: &DVector<f64>) -> f64 {
    diag.iter().zip(v.iter()).map(|(w, x)| w * x * x).sum()
}

/// Standalone reward: control-effort penalty on the normalized command,
/// sigmoid stabilization bonuses on the attitude and position errors, and
/// quadratic slosh force/torque penalties.
pub fn reward_standalone(
    state: &StateVector,
    raw_action: &DVector<f64>,
    slosh: &Disturbance,
    t: f64,
    weights: &RewardWeights,
    goal: &StateVector,
) -> Result<f64> {
    if raw_action.len() != weights.control_weight.len() {
        return Err(Error::Dimension(format!(
            "action has {} axes, control weight expects {}",
            raw_action.len(),
            weights.control_weight.len()
        )));
    }
    let k = k_schedule(weights, t);
    let att_err = state.attitude_angle_to(goal);
    let pos_err = state.position_error_to(goal);
    Ok(-quadratic_form(&weights.control_weight, raw_action)
        + sigmoid_bonus(weights.rot_bonus, att_err, k)
        + sigmoid_bonus(weights.pos_bonus, pos_err, k)
        - weights.slosh_force_weight * slosh.force.norm_squared()
        - weights.slosh_torque_weight * slosh.torque.norm_squared())
}

/// Hybrid reward: the standalone terms minus the weighted tracking error
/// against the planner reference.
#[allow(clippy::too_many_arguments)]
pub fn reward_mpc(
    state: &StateVector,
    mpc_ref: &StateVector,
    raw_action: &DVector<f64>,
    slosh: &Disturbance,
    t: f64,
    weights: &RewardWeights,
    goal: &StateVector,
    mode: ControlMode,
) -> Result<f64> {
    let err = error_coords(state, mpc_ref, mode);
    if err.len() != weights.state_error_weight.len() {
        return Err(Error::Dimension(format!(
            "state error has {} coordinates, weight expects {}",
            err.len(),
            weights.state_error_weight.len()
        )));
    }
    let tracking = quadratic_form(&weights.state_error_weight, &err);
    Ok(reward_standalone(state, raw_action, slosh, t, weights, goal)? - tracking)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::quat_from_axis_angle;
    use nalgebra::Vector3;

    fn planar_weights() -> RewardWeights {
        RewardWeights {
            control_weight: DVector::from_column_slice(&[10.0, 10.0, 10.0]),
            state_error_weight: DVector::from_column_slice(&[1.0, 10.0, 5.0]),
            rot_bonus: 100.0,
            pos_bonus: 10.0,
            slosh_force_weight: 5.0,
            slosh_torque_weight: 10.0,
            k0: 1.0,
            k1: 0.15,
        }
    }

    #[test]
    fn perfect_state_reward_is_half_the_bonuses() {
        let w = planar_weights();
        let goal = StateVector::rest();
        let r = reward_standalone(&goal, &DVector::zeros(3), &Disturbance::zero(), 0.0, &w, &goal)
            .unwrap();
        assert!((r - 55.0).abs() < 1e-12, "r = {r}");
    }

    #[test]
    fn large_errors_drive_reward_to_zero() {
        let w = planar_weights();
        let goal = StateVector::rest();
        let mut far = StateVector::rest();
        far.rel_pos = Vector3::new(80.0, 0.0, 0.0);
        far.quat = quat_from_axis_angle(&Vector3::z(), 3.0);
        let r = reward_standalone(&far, &DVector::zeros(3), &Disturbance::zero(), 100.0, &w, &goal)
            .unwrap();
        assert!(r > 0.0 && r < 1e-6, "r = {r}");
    }

    #[test]
    fn unit_control_penalty() {
        let w = planar_weights();
        let goal = StateVector::rest();
        let r = reward_standalone(
            &goal,
            &DVector::from_column_slice(&[1.0, 0.0, 0.0]),
            &Disturbance::zero(),
            0.0,
            &w,
            &goal,
        )
        .unwrap();
        assert!((r - (55.0 - 10.0)).abs() < 1e-12);
    }

    #[test]
    fn mpc_reward_on_reference_equals_standalone() {
        let w = planar_weights();
        let goal = StateVector::rest();
        let mut state = StateVector::rest();
        state.rel_pos = Vector3::new(1.0, -0.5, 0.0);
        let action = DVector::from_column_slice(&[0.2, -0.1, 0.3]);
        let standalone =
            reward_standalone(&state, &action, &Disturbance::zero(), 3.0, &w, &goal).unwrap();
        let hybrid = reward_mpc(
            &state,
            &state,
            &action,
            &Disturbance::zero(),
            3.0,
            &w,
            &goal,
            ControlMode::Planar,
        )
        .unwrap();
        assert_eq!(standalone, hybrid);
    }

    #[test]
    fn unit_tracking_offset_costs_its_weight() {
        let mut w = planar_weights();
        w.state_error_weight = DVector::from_column_slice(&[1.0, 10.0, 5.0]);
        let goal = StateVector::rest();
        let reference = StateVector::rest();
        let mut state = StateVector::rest();
        state.rel_pos = Vector3::new(1.0, 0.0, 0.0);
        let action = DVector::zeros(3);
        let standalone =
            reward_standalone(&state, &action, &Disturbance::zero(), 0.0, &w, &goal).unwrap();
        let hybrid = reward_mpc(
            &state,
            &reference,
            &action,
            &Disturbance::zero(),
            0.0,
            &w,
            &goal,
            ControlMode::Planar,
        )
        .unwrap();
        assert!((standalone - hybrid - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hybrid_never_exceeds_standalone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w = planar_weights();
        let goal = StateVector::rest();
        for _ in 0..200 {
            let mut state = StateVector::rest();
            state.rel_pos = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0);
            state.quat = quat_from_axis_angle(&Vector3::z(), rng.gen_range(-3.0..3.0));
            let mut reference = StateVector::rest();
            reference.rel_pos =
                Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), 0.0);
            let action = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let slosh = Disturbance {
                force: Vector3::new(rng.gen_range(-1.0..1.0), 0.0, 0.0),
                torque: Vector3::zeros(),
            };
            let t = rng.gen_range(0.0..60.0);
            let a = reward_standalone(&state, &action, &slosh, t, &w, &goal).unwrap();
            let b = reward_mpc(
                &state,
                &reference,
                &action,
                &slosh,
                t,
                &w,
                &goal,
                ControlMode::Planar,
            )
            .unwrap();
            assert!(b <= a + 1e-12);
        }
    }

    #[test]
    fn reward_monotone_in_each_error_channel() {
        let w = planar_weights();
        let goal = StateVector::rest();
        let action = DVector::zeros(3);
        let zero = Disturbance::zero();
        // Position error.
        let mut prev = f64::INFINITY;
        for d in [0.0, 0.1, 0.5, 2.0, 10.0] {
            let mut s = StateVector::rest();
            s.rel_pos = Vector3::new(d, 0.0, 0.0);
            let r = reward_standalone(&s, &action, &zero, 1.0, &w, &goal).unwrap();
            assert!(r <= prev);
            prev = r;
        }
        // Attitude error.
        prev = f64::INFINITY;
        for a in [0.0, 0.2, 0.8, 2.0, 3.1] {
            let mut s = StateVector::rest();
            s.quat = quat_from_axis_angle(&Vector3::z(), a);
            let r = reward_standalone(&s, &action, &zero, 1.0, &w, &goal).unwrap();
            assert!(r <= prev);
            prev = r;
        }
        // Slosh force magnitude.
        prev = f64::INFINITY;
        for f in [0.0, 0.5, 1.0, 4.0] {
            let d = Disturbance {
                force: Vector3::new(f, 0.0, 0.0),
                torque: Vector3::zeros(),
            };
            let r =
                reward_standalone(&StateVector::rest(), &action, &d, 1.0, &w, &goal).unwrap();
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn bonus_sharpens_as_time_grows() {
        let w = planar_weights();
        let goal = StateVector::rest();
        let mut s = StateVector::rest();
        s.rel_pos = Vector3::new(0.5, 0.0, 0.0);
        let action = DVector::zeros(3);
        let zero = Disturbance::zero();
        let mut prev = f64::INFINITY;
        for t in [0.0, 10.0, 30.0, 60.0] {
            let r = reward_standalone(&s, &action, &zero, t, &w, &goal).unwrap();
            assert!(r < prev, "bonus must strictly decrease for fixed error");
            prev = r;
        }
    }

    #[test]
    fn docking_error_coords_shape_and_sign_invariance() {
        let mut a = StateVector::rest();
        a.quat = quat_from_axis_angle(&Vector3::x(), 0.4);
        let b = StateVector::rest();
        let e1 = error_coords(&a, &b, ControlMode::Docking);
        assert_eq!(e1.len(), 12);
        let mut a_flipped = a;
        a_flipped.quat = -a.quat;
        let e2 = error_coords(&a_flipped, &b, ControlMode::Docking);
        assert!((e1 - e2).norm() < 1e-12);
    }
}
