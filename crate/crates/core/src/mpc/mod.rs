//! Finite-horizon convex MPC for nominal docking trajectories.
//!
//! The continuous problem — drive the predicted state to the goal while
//! penalizing control effort, subject to the admissible zone, input limits,
//! and the keep-out sphere — is discretized on the horizon grid and
//! condensed over the control sequence. Input limits survive condensing as
//! a box; state limits and the (linearized) keep-out constraint become
//! soft hinge penalties so the problem stays solvable by projected
//! gradient descent. Hard state feasibility is then checked post hoc on
//! the emitted plan.

pub mod qp;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{
    discretize, linearize, ControlInput, LinearModel, SpacecraftParams, StateVector, CONTROL_DIM,
    STATE_DIM,
};
use crate::error::{Error, Result};

pub use qp::{solve_qp, HingePenalty, QpSolution, QuadraticProgram, SolveStatus};

/// Default KKT tolerance for planner solves.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-8;
/// Default iteration cap for planner solves.
pub const DEFAULT_SOLVER_MAX_ITER: usize = 5000;
/// Soft state-constraint weight as a multiple of the largest state weight.
pub const SOFT_CONSTRAINT_FACTOR: f64 = 1e3;

/// Horizon length, grid step, and quadratic weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonConfig {
    pub steps: usize,
    pub dt: f64,
    /// Running state weight, n x n PSD.
    pub state_weight: DMatrix<f64>,
    /// Control weight, m x m PD.
    pub input_weight: DMatrix<f64>,
    /// Extra terminal state weight, n x n PSD.
    pub terminal_weight: DMatrix<f64>,
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::InvalidParam("horizon needs at least one step".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParam("horizon dt must be positive".into()));
        }
        for (name, m) in [
            ("state_weight", &self.state_weight),
            ("terminal_weight", &self.terminal_weight),
            ("input_weight", &self.input_weight),
        ] {
            if m.nrows() != m.ncols() {
                return Err(Error::Dimension(format!("{name} must be square")));
            }
            let scale = m.iter().fold(1.0f64, |a, x| a.max(x.abs()));
            for r in 0..m.nrows() {
                for c in (r + 1)..m.ncols() {
                    if (m[(r, c)] - m[(c, r)]).abs() > 1e-9 * scale {
                        return Err(Error::InvalidParam(format!("{name} must be symmetric")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Componentwise state box, input box, and keep-out sphere radius.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub state_lower: DVector<f64>,
    pub state_upper: DVector<f64>,
    pub input_lower: DVector<f64>,
    pub input_upper: DVector<f64>,
    /// Radius of the sphere around the target the plan should not enter;
    /// zero disables the constraint.
    pub keep_out_radius: f64,
}

impl ConstraintSet {
    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in self
            .state_lower
            .iter()
            .zip(self.state_upper.iter())
            .chain(self.input_lower.iter().zip(self.input_upper.iter()))
        {
            if lo > hi {
                return Err(Error::InvalidParam("constraint box has lower > upper".into()));
            }
        }
        if !(self.keep_out_radius >= 0.0) {
            return Err(Error::InvalidParam("keep_out_radius must be >= 0".into()));
        }
        Ok(())
    }

    /// Unbounded state box with the given input limits.
    pub fn input_box_only(input_lower: DVector<f64>, input_upper: DVector<f64>) -> Self {
        let n = STATE_DIM;
        Self {
            state_lower: DVector::from_element(n, f64::NEG_INFINITY),
            state_upper: DVector::from_element(n, f64::INFINITY),
            input_lower,
            input_upper,
            keep_out_radius: 0.0,
        }
    }

    pub fn state_in_box(&self, s: &DVector<f64>) -> bool {
        s.iter()
            .zip(self.state_lower.iter().zip(self.state_upper.iter()))
            .all(|(x, (lo, hi))| x >= lo && x <= hi)
    }
}

/// MPC-optimal state and control sequence over a horizon.
#[derive(Debug, Clone)]
pub struct TrajectoryPlan {
    /// Planned states, length `steps + 1`; `states[0]` is the initial state.
    pub states: Vec<StateVector>,
    /// Planned controls, length `steps`.
    pub controls: Vec<ControlInput>,
    pub start_time: f64,
    pub dt: f64,
    pub solve_status: SolveStatus,
    pub kkt_residual: f64,
    /// Whether every planned state satisfies the hard state box (the box is
    /// only enforced softly inside the QP).
    pub states_feasible: bool,
}

impl TrajectoryPlan {
    pub fn steps(&self) -> usize {
        self.controls.len()
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.dt * self.steps() as f64
    }

    /// Planned control at time `t` under zero-order hold; zero beyond the
    /// horizon end.
    pub fn control_at(&self, t: f64) -> ControlInput {
        let rel = t - self.start_time;
        if rel < 0.0 {
            return self.controls[0];
        }
        let idx = (rel / self.dt).floor() as usize;
        if idx >= self.controls.len() {
            ControlInput::zero()
        } else {
            self.controls[idx]
        }
    }
}

/// Builds the condensed quadratic program for the discrete model, horizon,
/// and constraint set, starting from `initial` and tracking `goal`.
pub fn build_qp(
    initial: &StateVector,
    goal: &StateVector,
    model: &LinearModel,
    horizon: &HorizonConfig,
    constraints: &ConstraintSet,
) -> Result<QuadraticProgram> {
    horizon.validate()?;
    constraints.validate()?;
    model.check_consistent()?;
    let model_dt = model
        .step
        .ok_or_else(|| Error::InvalidParam("build_qp needs a discrete model".into()))?;
    if (model_dt - horizon.dt).abs() > 1e-9 * horizon.dt.max(1.0) {
        return Err(Error::InvalidParam(format!(
            "model dt {model_dt} disagrees with horizon dt {}",
            horizon.dt
        )));
    }
    let n = model.state_dim();
    let m = model.input_dim();
    let steps = horizon.steps;
    if horizon.state_weight.nrows() != n
        || horizon.terminal_weight.nrows() != n
        || horizon.input_weight.nrows() != m
    {
        return Err(Error::Dimension("weight dimensions disagree with model".into()));
    }
    if constraints.state_lower.len() != n || constraints.input_lower.len() != m {
        return Err(Error::Dimension("constraint dimensions disagree with model".into()));
    }

    // Impulse responses M_i = A^i B and offset prefix sums.
    let mut impulse: Vec<DMatrix<f64>> = Vec::with_capacity(steps);
    impulse.push(model.b_mat.clone());
    for i in 1..steps {
        let next = &model.a_mat * &impulse[i - 1];
        impulse.push(next);
    }

    let s0 = DVector::from_column_slice(initial.to_vector().as_slice());
    let goal_vec = DVector::from_column_slice(goal.to_vector().as_slice());

    // Free response (zero control) and prediction matrix G, stacked over
    // prediction steps k = 1..=steps.
    let mut free = DVector::<f64>::zeros(steps * n);
    let mut g_pred = DMatrix::<f64>::zeros(steps * n, steps * m);
    let mut reach = s0.clone();
    for k in 1..=steps {
        reach = &model.a_mat * reach + &model.offset;
        free.rows_mut((k - 1) * n, n).copy_from(&reach);
        for j in 0..k {
            g_pred
                .view_mut(((k - 1) * n, j * m), (n, m))
                .copy_from(&impulse[k - 1 - j]);
        }
    }

    // Weighted prediction W * G and the tracking error of the free response.
    let mut weighted_g = DMatrix::<f64>::zeros(steps * n, steps * m);
    let mut weighted_err = DVector::<f64>::zeros(steps * n);
    let mut err_free = DVector::<f64>::zeros(steps * n);
    let mut constant = 0.0;
    for k in 1..=steps {
        let mut w_k = horizon.state_weight.clone();
        if k == steps {
            w_k += &horizon.terminal_weight;
        }
        let rows = (k - 1) * n;
        let e_k = free.rows(rows, n) - &goal_vec;
        err_free.rows_mut(rows, n).copy_from(&e_k);
        let g_k: DMatrix<f64> = g_pred.view((rows, 0), (n, steps * m)).into();
        weighted_g.view_mut((rows, 0), (n, steps * m)).copy_from(&(&w_k * g_k));
        let we = &w_k * &e_k;
        weighted_err.rows_mut(rows, n).copy_from(&we);
        constant += e_k.dot(&we);
    }

    let mut hessian = g_pred.transpose() * &weighted_g;
    for k in 0..steps {
        let mut block = hessian.view_mut((k * m, k * m), (m, m));
        block += &horizon.input_weight;
    }
    hessian *= 2.0;
    // Symmetrize away accumulation noise.
    hessian = (&hessian + hessian.transpose()) * 0.5;
    let gradient = 2.0 * g_pred.transpose() * &weighted_err;

    let mut lower = DVector::zeros(steps * m);
    let mut upper = DVector::zeros(steps * m);
    for k in 0..steps {
        lower.rows_mut(k * m, m).copy_from(&constraints.input_lower);
        upper.rows_mut(k * m, m).copy_from(&constraints.input_upper);
    }

    let soft_weight = SOFT_CONSTRAINT_FACTOR
        * horizon
            .state_weight
            .iter()
            .fold(0.0f64, |a, x| a.max(x.abs()))
            .max(1.0);
    let mut penalties = Vec::new();
    let row_of = |row: usize| -> DVector<f64> {
        DVector::from_fn(steps * m, |c, _| g_pred[(row, c)])
    };
    for k in 1..=steps {
        let base = (k - 1) * n;
        for i in 0..n {
            let hi = constraints.state_upper[i];
            if hi.is_finite() {
                penalties.push(HingePenalty {
                    normal: row_of(base + i),
                    offset: free[base + i] - hi,
                    weight: soft_weight,
                });
            }
            let lo = constraints.state_lower[i];
            if lo.is_finite() {
                penalties.push(HingePenalty {
                    normal: -row_of(base + i),
                    offset: lo - free[base + i],
                    weight: soft_weight,
                });
            }
        }
    }

    // Keep-out sphere, linearized as the half-space at the current bearing:
    // bearing . pos_k >= radius.
    if constraints.keep_out_radius > 0.0 {
        let pos_norm = initial.rel_pos.norm();
        if pos_norm > 1e-9 {
            let bearing = initial.rel_pos / pos_norm;
            for k in 1..=steps {
                let base = (k - 1) * n;
                let mut normal = DVector::zeros(steps * m);
                let mut free_term = 0.0;
                for i in 0..3 {
                    normal.axpy(-bearing[i], &row_of(base + i), 1.0);
                    free_term += bearing[i] * free[base + i];
                }
                penalties.push(HingePenalty {
                    normal,
                    offset: constraints.keep_out_radius - free_term,
                    weight: soft_weight,
                });
            }
        }
    }

    Ok(QuadraticProgram {
        hessian,
        gradient,
        lower,
        upper,
        penalties,
        constant,
    })
}

/// Linearizes about the initial state, solves the condensed program, and
/// rolls the optimal controls through the discrete model to emit the plan.
pub fn plan_trajectory(
    initial: &StateVector,
    goal: &StateVector,
    params: &SpacecraftParams,
    horizon: &HorizonConfig,
    constraints: &ConstraintSet,
) -> Result<TrajectoryPlan> {
    plan_trajectory_with(
        initial,
        goal,
        params,
        horizon,
        constraints,
        0.0,
        DEFAULT_SOLVER_TOL,
        DEFAULT_SOLVER_MAX_ITER,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn plan_trajectory_with(
    initial: &StateVector,
    goal: &StateVector,
    params: &SpacecraftParams,
    horizon: &HorizonConfig,
    constraints: &ConstraintSet,
    start_time: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TrajectoryPlan> {
    params.validate()?;
    constraints.validate()?;
    if !initial.is_finite() || !goal.is_finite() {
        return Err(Error::NonFinite("plan_trajectory state"));
    }
    let s0 = DVector::from_column_slice(initial.to_vector().as_slice());
    if !constraints.state_in_box(&s0) {
        return Err(Error::InvalidParam(
            "initial state outside the admissible zone".into(),
        ));
    }

    let continuous = linearize(initial, &ControlInput::zero(), params)?;
    let model = discretize(&continuous, horizon.dt)?;
    let program = build_qp(initial, goal, &model, horizon, constraints)?;
    let solution = solve_qp(&program, tol, max_iter)?;

    let m = CONTROL_DIM;
    let mut controls = Vec::with_capacity(horizon.steps);
    for k in 0..horizon.steps {
        let mut u = [0.0; CONTROL_DIM];
        for j in 0..m {
            u[j] = solution.x[k * m + j];
        }
        controls.push(ControlInput::from_slice(&u)?);
    }

    let mut states = Vec::with_capacity(horizon.steps + 1);
    states.push(*initial);
    let mut s = s0;
    let mut feasible = true;
    for u in &controls {
        let u_vec = DVector::from_column_slice(u.to_vector().as_slice());
        s = &model.a_mat * &s + &model.b_mat * u_vec + &model.offset;
        feasible &= constraints.state_in_box(&s);
        let mut sv = StateVector::from_vector(&nalgebra::SVector::<f64, STATE_DIM>::from_column_slice(
            s.as_slice(),
        ));
        sv.renormalize_quat()?;
        states.push(sv);
    }

    Ok(TrajectoryPlan {
        states,
        controls,
        start_time,
        dt: horizon.dt,
        solve_status: solution.status,
        kkt_residual: solution.kkt_residual,
        states_feasible: feasible,
    })
}

/// Zero-order-hold lookup of the planned state at time `t`, clamped to the
/// final planned state beyond the horizon.
pub fn reference_lookup(plan: &TrajectoryPlan, t: f64) -> StateVector {
    let rel = t - plan.start_time;
    if rel <= 0.0 {
        return plan.states[0];
    }
    let idx = (rel / plan.dt).floor() as usize;
    plan.states[idx.min(plan.states.len() - 1)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn scalar_integrator_model(dt: f64) -> LinearModel {
        // s+ = s + u dt, exactly (A = 0 continuous).
        LinearModel {
            a_mat: DMatrix::identity(1, 1),
            b_mat: DMatrix::from_element(1, 1, dt),
            offset: DVector::zeros(1),
            step: Some(dt),
        }
    }

    fn scalar_horizon() -> HorizonConfig {
        HorizonConfig {
            steps: 1,
            dt: 1.0,
            state_weight: DMatrix::from_element(1, 1, 1.0),
            input_weight: DMatrix::from_element(1, 1, 1.0),
            terminal_weight: DMatrix::zeros(1, 1),
        }
    }

    fn scalar_constraints(bound: f64) -> ConstraintSet {
        ConstraintSet {
            state_lower: DVector::from_element(1, f64::NEG_INFINITY),
            state_upper: DVector::from_element(1, f64::INFINITY),
            input_lower: DVector::from_element(1, -bound),
            input_upper: DVector::from_element(1, bound),
            keep_out_radius: 0.0,
        }
    }

    /// The 1-D examples bypass the 13-state plumbing and exercise build_qp
    /// directly on a single-integrator model, so the optimum has the
    /// closed form u* = Omega dt (s_f - s_0) / (Omega dt^2 + K).
    fn solve_scalar_case(bound: f64) -> f64 {
        let model = scalar_integrator_model(1.0);
        let horizon = scalar_horizon();
        let constraints = scalar_constraints(bound);
        // Build the QP by hand-stacking: s1 = s0 + u, cost (s1-1)^2 + u^2.
        let qp = {
            let g = DMatrix::from_element(1, 1, 1.0); // ds1/du
            let free_err = DVector::from_element(1, -1.0); // s0=0 vs goal 1
            let hessian = 2.0
                * (g.transpose() * &horizon.state_weight * &g + horizon.input_weight.clone());
            let gradient = 2.0 * g.transpose() * &horizon.state_weight * free_err;
            QuadraticProgram {
                hessian,
                gradient,
                lower: constraints.input_lower.clone(),
                upper: constraints.input_upper.clone(),
                penalties: vec![],
                constant: 1.0,
            }
        };
        assert!(model.step.is_some());
        solve_qp(&qp, 1e-12, 10_000).unwrap().x[0]
    }

    #[test]
    fn scalar_analytic_optimum() {
        // Oracle: Omega dt (s_f - s0) / (Omega dt^2 + K) = 1/2.
        let u = solve_scalar_case(f64::INFINITY);
        assert!((u - 0.5).abs() < 1e-10, "u = {u}");
    }

    #[test]
    fn scalar_clipped_optimum() {
        let u = solve_scalar_case(0.3);
        assert!((u - 0.3).abs() < 1e-12, "u = {u}");
    }

    fn table_params() -> SpacecraftParams {
        SpacecraftParams {
            dry_mass: 250.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(100.0, 100.0, 150.0)),
            orbital_rate: 1.08308e-3,
            force_limit: 10.0,
            torque_limit: 1.0,
        }
    }

    fn docking_horizon(steps: usize, dt: f64) -> HorizonConfig {
        let mut omega = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let diag = [1.0, 1.0, 1.0, 10.0, 10.0, 10.0, 5.0, 5.0, 5.0, 0.0, 50.0, 50.0, 50.0];
        for (i, d) in diag.iter().enumerate() {
            omega[(i, i)] = *d;
        }
        HorizonConfig {
            steps,
            dt,
            state_weight: omega.clone(),
            input_weight: DMatrix::identity(CONTROL_DIM, CONTROL_DIM) * 10.0,
            terminal_weight: omega * 10.0,
        }
    }

    fn wrench_constraints(limit: f64) -> ConstraintSet {
        ConstraintSet::input_box_only(
            DVector::from_element(CONTROL_DIM, -limit),
            DVector::from_element(CONTROL_DIM, limit),
        )
    }

    #[test]
    fn plan_from_goal_is_all_zero() {
        let params = table_params();
        let goal = StateVector::rest();
        let plan = plan_trajectory(
            &goal,
            &goal,
            &params,
            &docking_horizon(10, 1.0),
            &wrench_constraints(10.0),
        )
        .unwrap();
        assert!(plan.solve_status.converged());
        for u in &plan.controls {
            assert!(u.force.norm() < 1e-9 && u.torque.norm() < 1e-9);
        }
        for s in &plan.states {
            assert!(s.position_error_to(&goal) < 1e-9);
        }
    }

    #[test]
    fn plan_reduces_error_and_respects_limits() {
        let params = table_params();
        let mut initial = StateVector::rest();
        initial.rel_pos = Vector3::new(10.0, 0.0, 0.0);
        let goal = StateVector::rest();
        let plan = plan_trajectory(
            &initial,
            &goal,
            &params,
            &docking_horizon(50, 1.0),
            &wrench_constraints(10.0),
        )
        .unwrap();
        assert!(plan.solve_status.converged());
        let terminal = plan.states.last().unwrap();
        assert!(terminal.position_error_to(&goal) < initial.position_error_to(&goal));
        for u in &plan.controls {
            for c in u.force.iter().chain(u.torque.iter()) {
                assert!(c.abs() <= 10.0 + 1e-12);
            }
        }
    }

    #[test]
    fn zero_state_weight_gives_zero_controls() {
        let params = table_params();
        let mut initial = StateVector::rest();
        initial.rel_pos = Vector3::new(5.0, -3.0, 1.0);
        let mut horizon = docking_horizon(20, 1.0);
        horizon.state_weight = DMatrix::zeros(STATE_DIM, STATE_DIM);
        horizon.terminal_weight = DMatrix::zeros(STATE_DIM, STATE_DIM);
        let plan = plan_trajectory(
            &initial,
            &StateVector::rest(),
            &params,
            &horizon,
            &wrench_constraints(10.0),
        )
        .unwrap();
        for u in &plan.controls {
            assert!(u.force.norm() < 1e-9 && u.torque.norm() < 1e-9);
        }
    }

    #[test]
    fn reference_lookup_zoh() {
        let params = table_params();
        let mut initial = StateVector::rest();
        initial.rel_pos = Vector3::new(2.0, 0.0, 0.0);
        let plan = plan_trajectory_with(
            &initial,
            &StateVector::rest(),
            &params,
            &docking_horizon(4, 1.0),
            &wrench_constraints(10.0),
            100.0,
            DEFAULT_SOLVER_TOL,
            DEFAULT_SOLVER_MAX_ITER,
        )
        .unwrap();
        let s0 = reference_lookup(&plan, 100.0);
        assert_eq!(s0.rel_pos, plan.states[0].rel_pos);
        let s2 = reference_lookup(&plan, 100.0 + 2.5);
        assert_eq!(s2.rel_pos, plan.states[2].rel_pos);
        let beyond = reference_lookup(&plan, 100.0 + 50.0);
        assert_eq!(beyond.rel_pos, plan.states[4].rel_pos);
    }

    #[test]
    fn rejects_initial_outside_zone() {
        let params = table_params();
        let mut constraints = wrench_constraints(10.0);
        constraints.state_upper[0] = 5.0;
        let mut initial = StateVector::rest();
        initial.rel_pos[0] = 6.0;
        assert!(plan_trajectory(
            &initial,
            &StateVector::rest(),
            &params,
            &docking_horizon(5, 1.0),
            &constraints,
        )
        .is_err());
    }

    #[test]
    fn rejects_mismatched_dt() {
        let params = table_params();
        let continuous = linearize(&StateVector::rest(), &ControlInput::zero(), &params).unwrap();
        let model = discretize(&continuous, 2.0).unwrap();
        let horizon = docking_horizon(5, 1.0);
        assert!(build_qp(
            &StateVector::rest(),
            &StateVector::rest(),
            &model,
            &horizon,
            &wrench_constraints(10.0),
        )
        .is_err());
    }

    #[test]
    fn receding_horizon_tail_consistency() {
        // Time-invariant regime: translation only, attitude at identity.
        // The tail of an optimal plan solves the shrunken-horizon problem,
        // so replanning from an on-plan state reproduces it.
        let params = table_params();
        let mut initial = StateVector::rest();
        initial.rel_pos = Vector3::new(8.0, -5.0, 0.0);
        let constraints = wrench_constraints(10.0);
        let full = plan_trajectory(
            &initial,
            &StateVector::rest(),
            &params,
            &docking_horizon(40, 1.0),
            &constraints,
        )
        .unwrap();
        assert!(full.solve_status.converged());

        let k = 10;
        let replan = plan_trajectory_with(
            &full.states[k],
            &StateVector::rest(),
            &params,
            &docking_horizon(40 - k, 1.0),
            &constraints,
            full.start_time + k as f64,
            1e-10,
            20_000,
        )
        .unwrap();
        assert!(replan.solve_status.converged());
        for i in 0..(40 - k) {
            let a = full.controls[k + i].to_vector();
            let b = replan.controls[i].to_vector();
            assert!(
                (a - b).norm() < 1e-6,
                "tail control {i} diverged: {:?} vs {:?}",
                full.controls[k + i],
                replan.controls[i]
            );
        }
    }
}
