//! Adaptive-moment gradient descent with bias correction.

use nalgebra::DVector;

use crate::error::{Error, Result};

use super::mlp::{MlpGradient, MlpParams};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    step: u64,
) {
    let bc1 = 1.0 - BETA1.powi(step as i32);
    let bc2 = 1.0 - BETA2.powi(step as i32);
    for i in 0..param.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

/// Optimizer state for a dense network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub step: u64,
    m: MlpGradient,
    v: MlpGradient,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: params.zeros_gradient(),
            v: params.zeros_gradient(),
        }
    }

    /// Applies one descent step of the supplied loss gradient. Non-finite
    /// gradients are rejected as a divergence signal.
    pub fn apply(&mut self, params: &mut MlpParams, grad: &MlpGradient) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::Divergence("non-finite network gradient".into()));
        }
        if grad.d_weights.len() != params.weights.len() {
            return Err(Error::Dimension("gradient layer count mismatch".into()));
        }
        self.step += 1;
        for l in 0..params.weights.len() {
            adam_update(
                params.weights[l].as_mut_slice(),
                grad.d_weights[l].as_slice(),
                self.m.d_weights[l].as_mut_slice(),
                self.v.d_weights[l].as_mut_slice(),
                self.lr,
                self.step,
            );
            adam_update(
                params.biases[l].as_mut_slice(),
                grad.d_biases[l].as_slice(),
                self.m.d_biases[l].as_mut_slice(),
                self.v.d_biases[l].as_mut_slice(),
                self.lr,
                self.step,
            );
        }
        Ok(())
    }

    pub(crate) fn moments(&self) -> (&MlpGradient, &MlpGradient) {
        (&self.m, &self.v)
    }

    pub(crate) fn moments_mut(&mut self) -> (&mut MlpGradient, &mut MlpGradient) {
        (&mut self.m, &mut self.v)
    }
}

/// Optimizer state for a bare parameter vector (e.g. the log standard
/// deviations of a Gaussian policy).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamVector {
    pub lr: f64,
    pub step: u64,
    pub m: DVector<f64>,
    pub v: DVector<f64>,
}

impl AdamVector {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            lr,
            step: 0,
            m: DVector::zeros(dim),
            v: DVector::zeros(dim),
        }
    }

    pub fn apply(&mut self, params: &mut DVector<f64>, grad: &DVector<f64>) -> Result<()> {
        if !grad.iter().all(|x| x.is_finite()) {
            return Err(Error::Divergence("non-finite vector gradient".into()));
        }
        if grad.len() != params.len() || grad.len() != self.m.len() {
            return Err(Error::Dimension("vector gradient length mismatch".into()));
        }
        self.step += 1;
        adam_update(
            params.as_mut_slice(),
            grad.as_slice(),
            self.m.as_mut_slice(),
            self.v.as_mut_slice(),
            self.lr,
            self.step,
        );
        Ok(())
    }
}
