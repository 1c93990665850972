//! Continuous-time relative orbital and attitude dynamics of the tanker,
//! their numerical integration, linearization, and zero-order-hold
//! discretization.
//!
//! Translational motion is expressed in the target-centered RSW frame
//! (radial x, along-track y, cross-track z) under the Clohessy-Wiltshire
//! model for a circular target orbit. Attitude follows rigid-body Euler
//! dynamics with scalar-last quaternion kinematics. Thrust and slosh
//! disturbances enter as body-frame wrenches rotated into RSW.

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3, Vector4};

use crate::error::{Error, Result};

/// State dimension: position (3), velocity (3), quaternion (4), rate (3).
pub const STATE_DIM: usize = 13;
/// Control dimension: body force (3) plus body torque (3).
pub const CONTROL_DIM: usize = 6;

/// Unit-norm tolerance accepted on quaternion inputs.
pub const QUAT_UNIT_TOL: f64 = 1e-6;

pub type State13 = SVector<f64, 13>;

/// Relative translational state, attitude quaternion (scalar-last), and
/// body angular rate of the chaser with respect to the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    /// Relative position in RSW, meters.
    pub rel_pos: Vector3<f64>,
    /// Relative velocity in RSW, m/s.
    pub rel_vel: Vector3<f64>,
    /// Attitude quaternion `[q1 q2 q3 q4]`, scalar last, body to RSW.
    pub quat: Vector4<f64>,
    /// Body-frame angular velocity, rad/s.
    pub ang_vel: Vector3<f64>,
}

impl StateVector {
    /// Rest state at the origin with identity attitude.
    pub fn rest() -> Self {
        Self {
            rel_pos: Vector3::zeros(),
            rel_vel: Vector3::zeros(),
            quat: Vector4::new(0.0, 0.0, 0.0, 1.0),
            ang_vel: Vector3::zeros(),
        }
    }

    pub fn to_vector(&self) -> State13 {
        let mut out = State13::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.rel_pos);
        out.fixed_rows_mut::<3>(3).copy_from(&self.rel_vel);
        out.fixed_rows_mut::<4>(6).copy_from(&self.quat);
        out.fixed_rows_mut::<3>(10).copy_from(&self.ang_vel);
        out
    }

    pub fn from_vector(v: &State13) -> Self {
        Self {
            rel_pos: v.fixed_rows::<3>(0).into(),
            rel_vel: v.fixed_rows::<3>(3).into(),
            quat: v.fixed_rows::<4>(6).into(),
            ang_vel: v.fixed_rows::<3>(10).into(),
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != STATE_DIM {
            return Err(Error::Dimension(format!(
                "state vector needs {STATE_DIM} components, got {}",
                v.len()
            )));
        }
        Ok(Self::from_vector(&State13::from_column_slice(v)))
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }

    pub fn quat_norm_error(&self) -> f64 {
        (self.quat.norm() - 1.0).abs()
    }

    /// Renormalizes the quaternion in place; errors on a degenerate norm.
    pub fn renormalize_quat(&mut self) -> Result<()> {
        let n = self.quat.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Integration("quaternion norm collapsed".into()));
        }
        self.quat /= n;
        Ok(())
    }

    /// Geodesic attitude angle to `other`, radians in `[0, pi]`.
    ///
    /// Uses the relative quaternion, so the result is insensitive to the
    /// sign ambiguity of either operand.
    pub fn attitude_angle_to(&self, other: &StateVector) -> f64 {
        let rel = quat_mul(&self.quat, &quat_conjugate(&other.quat));
        let vec_norm = rel.fixed_rows::<3>(0).norm();
        2.0 * vec_norm.atan2(rel[3].abs())
    }

    pub fn position_error_to(&self, other: &StateVector) -> f64 {
        (self.rel_pos - other.rel_pos).norm()
    }

    /// Yaw angle about the RSW z axis, for planar (yaw-only) attitudes.
    pub fn yaw(&self) -> f64 {
        2.0 * self.quat[2].atan2(self.quat[3])
    }
}

/// Hamilton product of scalar-last quaternions.
pub fn quat_mul(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector4<f64> {
    let (av, aw) = (Vector3::new(a[0], a[1], a[2]), a[3]);
    let (bv, bw) = (Vector3::new(b[0], b[1], b[2]), b[3]);
    let v = aw * bv + bw * av + av.cross(&bv);
    Vector4::new(v[0], v[1], v[2], aw * bw - av.dot(&bv))
}

pub fn quat_conjugate(q: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(-q[0], -q[1], -q[2], q[3])
}

/// Quaternion for a rotation of `angle` radians about unit `axis`.
pub fn quat_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Vector4<f64> {
    let half = 0.5 * angle;
    let v = axis * half.sin();
    Vector4::new(v[0], v[1], v[2], half.cos())
}

/// Body-frame force and torque command, newtons and newton-meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl ControlInput {
    pub fn zero() -> Self {
        Self {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }

    pub fn from_slice(u: &[f64]) -> Result<Self> {
        if u.len() != CONTROL_DIM {
            return Err(Error::Dimension(format!(
                "control needs {CONTROL_DIM} components, got {}",
                u.len()
            )));
        }
        Ok(Self {
            force: Vector3::new(u[0], u[1], u[2]),
            torque: Vector3::new(u[3], u[4], u[5]),
        })
    }

    pub fn to_vector(&self) -> SVector<f64, 6> {
        SVector::<f64, 6>::from_column_slice(&[
            self.force[0],
            self.force[1],
            self.force[2],
            self.torque[0],
            self.torque[1],
            self.torque[2],
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|x| x.is_finite())
    }

    /// Saturates each axis to the spacecraft's per-axis wrench limits.
    pub fn clamped(&self, params: &SpacecraftParams) -> Self {
        Self {
            force: self.force.map(|f| f.clamp(-params.force_limit, params.force_limit)),
            torque: self
                .torque
                .map(|t| t.clamp(-params.torque_limit, params.torque_limit)),
        }
    }
}

/// Physical characteristics of the tanker platform.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacecraftParams {
    /// Dry mass, kg.
    pub dry_mass: f64,
    /// Body inertia tensor, kg m^2, symmetric positive definite.
    pub inertia: Matrix3<f64>,
    /// Orbital rate of the target, rad/s.
    pub orbital_rate: f64,
    /// Per-axis thrust limit, N.
    pub force_limit: f64,
    /// Per-axis torque limit, N m.
    pub torque_limit: f64,
}

impl SpacecraftParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dry_mass > 0.0) {
            return Err(Error::InvalidParam("dry_mass must be positive".into()));
        }
        if !(self.orbital_rate > 0.0) {
            return Err(Error::InvalidParam("orbital_rate must be positive".into()));
        }
        if !(self.force_limit > 0.0) || !(self.torque_limit > 0.0) {
            return Err(Error::InvalidParam("wrench limits must be positive".into()));
        }
        let asym = (self.inertia - self.inertia.transpose()).abs().max();
        if asym > 1e-9 * self.inertia.abs().max().max(1.0) {
            return Err(Error::InvalidParam("inertia must be symmetric".into()));
        }
        if nalgebra::Cholesky::new(self.inertia).is_none() {
            return Err(Error::InvalidParam(
                "inertia must be positive definite".into(),
            ));
        }
        Ok(())
    }

    pub fn inertia_inverse(&self) -> Result<Matrix3<f64>> {
        self.inertia
            .try_inverse()
            .ok_or_else(|| Error::InvalidParam("singular inertia".into()))
    }
}

/// Body-frame slosh force and torque acting on the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Disturbance {
    pub fn zero() -> Self {
        Self {
            force: Vector3::zeros(),
            torque: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|x| x.is_finite())
    }
}

/// Linear (LTV snapshot) model `ds = A s + B u + d`, or its zero-order-hold
/// discretization `s+ = A s + B u + d` when `step` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub offset: DVector<f64>,
    /// Discretization step in seconds; `None` for the continuous model.
    pub step: Option<f64>,
}

impl LinearModel {
    pub fn state_dim(&self) -> usize {
        self.a_mat.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_mat.ncols()
    }

    pub fn check_consistent(&self) -> Result<()> {
        let n = self.a_mat.nrows();
        if self.a_mat.ncols() != n || self.b_mat.nrows() != n || self.offset.len() != n {
            return Err(Error::Dimension("linear model blocks disagree".into()));
        }
        Ok(())
    }
}

/// Clohessy-Wiltshire relative acceleration with thrust (already in RSW)
/// and a disturbance acceleration channel.
pub fn cw_acceleration(
    state: &StateVector,
    force_rsw: &Vector3<f64>,
    params: &SpacecraftParams,
    dist_accel: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    if !state.is_finite() || !force_rsw.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("cw_acceleration state/force"));
    }
    if !dist_accel.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("cw_acceleration disturbance"));
    }
    let n = params.orbital_rate;
    let m = params.dry_mass;
    let (x, z) = (state.rel_pos[0], state.rel_pos[2]);
    let (vx, vy) = (state.rel_vel[0], state.rel_vel[1]);
    Ok(Vector3::new(
        3.0 * n * n * x + 2.0 * n * vy + force_rsw[0] / m + dist_accel[0],
        -2.0 * n * vx + force_rsw[1] / m + dist_accel[1],
        -n * n * z + force_rsw[2] / m + dist_accel[2],
    ))
}

/// Quaternion kinematics and Euler rigid-body dynamics.
///
/// Returns `(quat_dot, ang_acc)` with the conventional gyroscopic sign
/// `I dw = tau - w x I w`.
pub fn attitude_derivative(
    quat: &Vector4<f64>,
    ang_vel: &Vector3<f64>,
    torque_total: &Vector3<f64>,
    params: &SpacecraftParams,
) -> Result<(Vector4<f64>, Vector3<f64>)> {
    if !quat.iter().all(|x| x.is_finite())
        || !ang_vel.iter().all(|x| x.is_finite())
        || !torque_total.iter().all(|x| x.is_finite())
    {
        return Err(Error::NonFinite("attitude_derivative input"));
    }
    if (quat.norm() - 1.0).abs() > QUAT_UNIT_TOL {
        return Err(Error::InvalidParam(format!(
            "quaternion norm {} outside unit tolerance",
            quat.norm()
        )));
    }
    let qv = Vector3::new(quat[0], quat[1], quat[2]);
    let w = ang_vel;
    let qdot_vec = 0.5 * (quat[3] * w - w.cross(&qv));
    let qdot_w = -0.5 * w.dot(&qv);
    let inertia_inv = params.inertia_inverse()?;
    let ang_acc = inertia_inv * (torque_total - w.cross(&(params.inertia * w)));
    Ok((
        Vector4::new(qdot_vec[0], qdot_vec[1], qdot_vec[2], qdot_w),
        ang_acc,
    ))
}

/// Rotation matrix from body frame to RSW for a scalar-last quaternion.
pub fn body_to_rsw(quat: &Vector4<f64>) -> Result<Matrix3<f64>> {
    if !quat.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("body_to_rsw quaternion"));
    }
    let n = quat.norm();
    if (n - 1.0).abs() > QUAT_UNIT_TOL {
        return Err(Error::InvalidParam(format!(
            "quaternion norm {n} outside unit tolerance"
        )));
    }
    // Normalize so the output is orthogonal to machine precision even for
    // inputs at the edge of the unit tolerance.
    let q = quat / n;
    let v = Vector3::new(q[0], q[1], q[2]);
    let w = q[3];
    let skew = Matrix3::new(
        0.0, -v[2], v[1], //
        v[2], 0.0, -v[0], //
        -v[1], v[0], 0.0,
    );
    Ok(Matrix3::identity() * (w * w - v.dot(&v)) + 2.0 * v * v.transpose() + 2.0 * w * skew)
}

/// Full nonlinear state derivative with disturbance channels.
pub fn state_derivative(
    state: &StateVector,
    control: &ControlInput,
    dist: &Disturbance,
    params: &SpacecraftParams,
) -> Result<State13> {
    if !state.is_finite() {
        return Err(Error::NonFinite("state_derivative state"));
    }
    if !control.is_finite() {
        return Err(Error::NonFinite("state_derivative control"));
    }
    if !dist.is_finite() {
        return Err(Error::NonFinite("state_derivative disturbance"));
    }
    let rot = body_to_rsw(&state.quat)?;
    let force_rsw = rot * control.force;
    let dist_accel = rot * dist.force / params.dry_mass;
    let accel = cw_acceleration(state, &force_rsw, params, &dist_accel)?;
    let torque_total = control.torque + dist.torque;
    let (qdot, wdot) = attitude_derivative(&state.quat, &state.ang_vel, &torque_total, params)?;

    let mut ds = State13::zeros();
    ds.fixed_rows_mut::<3>(0).copy_from(&state.rel_vel);
    ds.fixed_rows_mut::<3>(3).copy_from(&accel);
    ds.fixed_rows_mut::<4>(6).copy_from(&qdot);
    ds.fixed_rows_mut::<3>(10).copy_from(&wdot);
    Ok(ds)
}

/// Derivative on a raw 13-vector whose quaternion block may have drifted
/// slightly off the unit sphere (as Runge-Kutta stage states do). The
/// quaternion is projected back to the sphere before evaluation.
fn state_derivative_raw(
    s: &State13,
    control: &ControlInput,
    dist: &Disturbance,
    params: &SpacecraftParams,
) -> Result<State13> {
    let mut sv = StateVector::from_vector(s);
    sv.renormalize_quat()?;
    state_derivative(&sv, control, dist, params)
}

/// One classical fourth-order Runge-Kutta step with the control and
/// disturbance held constant, followed by quaternion renormalization.
pub fn integrate_step(
    state: &StateVector,
    control: &ControlInput,
    dist: &Disturbance,
    params: &SpacecraftParams,
    dt: f64,
) -> Result<StateVector> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Integration(format!("step dt={dt} must be positive")));
    }
    let y0 = state.to_vector();
    let k1 = state_derivative_raw(&y0, control, dist, params)?;
    let k2 = state_derivative_raw(&(y0 + 0.5 * dt * k1), control, dist, params)?;
    let k3 = state_derivative_raw(&(y0 + 0.5 * dt * k2), control, dist, params)?;
    let k4 = state_derivative_raw(&(y0 + dt * k3), control, dist, params)?;
    let y1 = y0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if !y1.iter().all(|x| x.is_finite()) {
        return Err(Error::Integration("non-finite state after step".into()));
    }
    let mut out = StateVector::from_vector(&y1);
    out.renormalize_quat()?;
    Ok(out)
}

/// Finite-difference step sizes per state component. Quaternion components
/// use a smaller step so perturbed states stay inside the unit tolerance.
fn fd_step(index: usize, value: f64) -> f64 {
    if (6..10).contains(&index) {
        5e-7
    } else {
        1e-6 * value.abs().max(1.0)
    }
}

/// First-order model about an operating point via central finite
/// differences of the undisturbed dynamics.
pub fn linearize(
    state: &StateVector,
    control: &ControlInput,
    params: &SpacecraftParams,
) -> Result<LinearModel> {
    let dist = Disturbance::zero();
    let s0 = state.to_vector();
    let u0 = control.to_vector();
    let f0 = state_derivative(state, control, &dist, params)?;

    let mut a = DMatrix::<f64>::zeros(STATE_DIM, STATE_DIM);
    for i in 0..STATE_DIM {
        let h = fd_step(i, s0[i]);
        let mut sp = s0;
        let mut sm = s0;
        sp[i] += h;
        sm[i] -= h;
        let fp = state_derivative(&StateVector::from_vector(&sp), control, &dist, params)?;
        let fm = state_derivative(&StateVector::from_vector(&sm), control, &dist, params)?;
        let col = (fp - fm) / (2.0 * h);
        for r in 0..STATE_DIM {
            a[(r, i)] = col[r];
        }
    }

    let mut b = DMatrix::<f64>::zeros(STATE_DIM, CONTROL_DIM);
    for j in 0..CONTROL_DIM {
        let h = 1e-6 * u0[j].abs().max(1.0);
        let mut up = u0;
        let mut um = u0;
        up[j] += h;
        um[j] -= h;
        let fp = state_derivative(state, &ControlInput::from_slice(up.as_slice())?, &dist, params)?;
        let fm = state_derivative(state, &ControlInput::from_slice(um.as_slice())?, &dist, params)?;
        let col = (fp - fm) / (2.0 * h);
        for r in 0..STATE_DIM {
            b[(r, j)] = col[r];
        }
    }

    let sd = DVector::from_column_slice(s0.as_slice());
    let ud = DVector::from_column_slice(u0.as_slice());
    let offset = DVector::from_column_slice(f0.as_slice()) - &a * sd - &b * ud;
    Ok(LinearModel {
        a_mat: a,
        b_mat: b,
        offset,
        step: None,
    })
}

/// Matrix exponential by scaling and squaring of a Taylor series with
/// relative truncation tolerance 1e-12.
pub fn matrix_exp(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Dimension("matrix_exp needs a square matrix".into()));
    }
    let norm = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs())) * n as f64;
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);

    let mut result = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    for k in 1..=200 {
        term = (&term * &scaled) / k as f64;
        result += &term;
        let term_norm = term.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let result_norm = result.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if term_norm <= 1e-12 * result_norm.max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric("matrix exponential series stalled".into()));
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Zero-order-hold discretization. Uses the augmented-matrix exponential so
/// the input and offset integrals share the series tolerance.
pub fn discretize(model: &LinearModel, dt: f64) -> Result<LinearModel> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Integration(format!("dt={dt} must be positive")));
    }
    model.check_consistent()?;
    let n = model.state_dim();
    let m = model.input_dim();
    // aug = [[A, B, d], [0, 0, 0]]; exp(aug*dt) holds A_d and the
    // convolution integrals of B and d in its top blocks.
    let dim = n + m + 1;
    let mut aug = DMatrix::<f64>::zeros(dim, dim);
    aug.view_mut((0, 0), (n, n)).copy_from(&model.a_mat);
    aug.view_mut((0, n), (n, m)).copy_from(&model.b_mat);
    aug.view_mut((0, n + m), (n, 1)).copy_from(&model.offset);
    let e = matrix_exp(&(aug * dt))?;
    Ok(LinearModel {
        a_mat: e.view((0, 0), (n, n)).into(),
        b_mat: e.view((0, n), (n, m)).into(),
        offset: DVector::from_fn(n, |r, _| e[(r, n + m)]),
        step: Some(dt),
    })
}
