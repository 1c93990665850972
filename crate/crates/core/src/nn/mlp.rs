//! Dense multilayer perceptron with exact reverse-mode gradients.
//!
//! Hidden layers use the hyperbolic tangent. The output layer is either
//! linear or split into a linear block followed by a softplus block (the
//! stochastic-policy head: action means plus strictly positive standard
//! deviations).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Floor added to softplus outputs so standard deviations stay positive.
pub const SOFTPLUS_FLOOR: f64 = 1e-6;

/// Output-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    /// First `linear` outputs are linear, the rest pass through
    /// `softplus(x) + SOFTPLUS_FLOOR`.
    LinearSoftplus { linear: usize },
}

/// Layer widths and output head of a dense network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    /// Sizes from input to output, at least two entries.
    pub sizes: Vec<usize>,
    pub output: OutputActivation,
}

impl MlpSpec {
    pub fn new(sizes: Vec<usize>, output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidParam("network needs input and output layers".into()));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParam("layer sizes must be positive".into()));
        }
        if let OutputActivation::LinearSoftplus { linear } = output {
            if linear > *sizes.last().unwrap() {
                return Err(Error::InvalidParam(
                    "linear head wider than the output layer".into(),
                ));
            }
        }
        Ok(Self { sizes, output })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }
}

/// Weights and biases of a dense network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

/// Gradients shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub d_weights: Vec<DMatrix<f64>>,
    pub d_biases: Vec<DVector<f64>>,
}

/// Intermediate activations retained by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input plus post-activation output of each layer; length L + 1.
    activations: Vec<DVector<f64>>,
    /// Pre-activation of each layer; length L.
    pre_activations: Vec<DVector<f64>>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl MlpParams {
    /// Initializes weights uniformly in `+-1/sqrt(fan_in)` and biases at
    /// zero.
    pub fn init<R: Rng>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut weights = Vec::with_capacity(spec.layer_count());
        let mut biases = Vec::with_capacity(spec.layer_count());
        for l in 0..spec.layer_count() {
            let (rows, cols) = (spec.sizes[l + 1], spec.sizes[l]);
            let bound = 1.0 / (cols as f64).sqrt();
            weights.push(DMatrix::from_fn(rows, cols, |_, _| {
                rng.gen_range(-bound..bound)
            }));
            biases.push(DVector::zeros(rows));
        }
        Self { spec, weights, biases }
    }

    pub fn zeros_gradient(&self) -> MlpGradient {
        MlpGradient {
            d_weights: self.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            d_biases: self.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn apply_output_activation(&self, z: &DVector<f64>) -> DVector<f64> {
        match self.spec.output {
            OutputActivation::Linear => z.clone(),
            OutputActivation::LinearSoftplus { linear } => DVector::from_fn(z.len(), |i, _| {
                if i < linear {
                    z[i]
                } else {
                    softplus(z[i]) + SOFTPLUS_FLOOR
                }
            }),
        }
    }

    /// Forward pass returning the output and the cache needed by
    /// [`MlpParams::backward`].
    pub fn forward(&self, input: &DVector<f64>) -> Result<(DVector<f64>, ForwardCache)> {
        if input.len() != self.spec.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.spec.input_dim()
            )));
        }
        let layers = self.spec.layer_count();
        let mut activations = Vec::with_capacity(layers + 1);
        let mut pre_activations = Vec::with_capacity(layers);
        activations.push(input.clone());
        for l in 0..layers {
            let z = &self.weights[l] * activations.last().unwrap() + &self.biases[l];
            let a = if l + 1 == layers {
                self.apply_output_activation(&z)
            } else {
                z.map(f64::tanh)
            };
            pre_activations.push(z);
            activations.push(a);
        }
        let out = activations.last().unwrap().clone();
        Ok((out, ForwardCache { activations, pre_activations }))
    }

    /// Output without a cache, for inference paths.
    pub fn infer(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward(input)?.0)
    }

    /// Exact reverse-mode gradients. Returns the parameter gradient and
    /// the gradient with respect to the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &DVector<f64>,
    ) -> Result<(MlpGradient, DVector<f64>)> {
        let layers = self.spec.layer_count();
        if cache.activations.len() != layers + 1 || cache.pre_activations.len() != layers {
            return Err(Error::Dimension("stale forward cache".into()));
        }
        if upstream.len() != self.spec.output_dim() {
            return Err(Error::Dimension("upstream gradient width mismatch".into()));
        }

        let mut grad = self.zeros_gradient();
        // Output layer activation derivative.
        let z_out = &cache.pre_activations[layers - 1];
        let mut delta = match self.spec.output {
            OutputActivation::Linear => upstream.clone(),
            OutputActivation::LinearSoftplus { linear } => DVector::from_fn(upstream.len(), |i, _| {
                if i < linear {
                    upstream[i]
                } else {
                    upstream[i] * sigmoid(z_out[i])
                }
            }),
        };

        for l in (0..layers).rev() {
            grad.d_weights[l] = &delta * cache.activations[l].transpose();
            grad.d_biases[l] = delta.clone();
            let mut below = self.weights[l].transpose() * &delta;
            if l > 0 {
                // tanh'(z) = 1 - a^2 using the cached activation.
                let a = &cache.activations[l];
                for i in 0..below.len() {
                    below[i] *= 1.0 - a[i] * a[i];
                }
            }
            delta = below;
        }
        Ok((grad, delta))
    }
}

impl MlpGradient {
    pub fn add_scaled(&mut self, other: &MlpGradient, scale: f64) {
        for (a, b) in self.d_weights.iter_mut().zip(other.d_weights.iter()) {
            a.zip_apply(b, |x, y| *x += scale * y);
        }
        for (a, b) in self.d_biases.iter_mut().zip(other.d_biases.iter()) {
            a.axpy(scale, b, 1.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.d_weights {
            *w *= factor;
        }
        for b in &mut self.d_biases {
            *b *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.d_biases.iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        let mut sum = 0.0;
        for w in &self.d_weights {
            sum += w.iter().map(|x| x * x).sum::<f64>();
        }
        for b in &self.d_biases {
            sum += b.iter().map(|x| x * x).sum::<f64>();
        }
        sum.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_linear_layer() {
        let spec = MlpSpec::new(vec![1, 1], OutputActivation::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = MlpParams::init(spec, &mut rng);
        net.weights[0][(0, 0)] = 2.0;
        net.biases[0][0] = 1.0;
        let (out, _) = net.forward(&DVector::from_element(1, 3.0)).unwrap();
        assert_eq!(out[0], 7.0);
    }

    #[test]
    fn zero_parameters_zero_output() {
        let spec = MlpSpec::new(vec![3, 4, 2], OutputActivation::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = MlpParams::init(spec, &mut rng);
        for w in &mut net.weights {
            w.fill(0.0);
        }
        let (out, _) = net.forward(&DVector::from_column_slice(&[1.0, -2.0, 3.0])).unwrap();
        assert_eq!(out, DVector::zeros(2));
    }

    #[test]
    fn two_layer_manual_composition() {
        // Oracle: hand-computed matrix arithmetic on a fixed 3-vector.
        let spec = MlpSpec::new(vec![3, 2, 1], OutputActivation::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = MlpParams::init(spec, &mut rng);
        net.weights[0] = DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 0.0, 0.5, -0.1]);
        net.biases[0] = DVector::from_column_slice(&[0.05, -0.05]);
        net.weights[1] = DMatrix::from_row_slice(1, 2, &[1.5, -0.7]);
        net.biases[1] = DVector::from_column_slice(&[0.2]);
        let x = DVector::from_column_slice(&[0.4, -1.2, 0.9]);
        let h1 = (0.1 * 0.4 - 0.2 * (-1.2) + 0.3 * 0.9 + 0.05f64).tanh();
        let h2 = (0.5 * (-1.2) - 0.1 * 0.9 - 0.05f64).tanh();
        let expected = 1.5 * h1 - 0.7 * h2 + 0.2;
        let (out, _) = net.forward(&x).unwrap();
        assert!((out[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn scalar_chain_rule() {
        // loss = (w x - y)^2 with w = 1, x = 2, y = 0: dloss/dw = 8.
        let spec = MlpSpec::new(vec![1, 1], OutputActivation::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = MlpParams::init(spec, &mut rng);
        net.weights[0][(0, 0)] = 1.0;
        net.biases[0][0] = 0.0;
        let (out, cache) = net.forward(&DVector::from_element(1, 2.0)).unwrap();
        let upstream = DVector::from_element(1, 2.0 * out[0]); // d(v^2)/dv
        let (grad, _) = net.backward(&cache, &upstream).unwrap();
        assert_eq!(grad.d_weights[0][(0, 0)], 8.0);
    }

    #[test]
    fn tanh_gradient_at_zero_is_identity() {
        let spec = MlpSpec::new(vec![1, 1, 1], OutputActivation::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = MlpParams::init(spec, &mut rng);
        net.weights[0][(0, 0)] = 1.0;
        net.weights[1][(0, 0)] = 1.0;
        net.biases[0][0] = 0.0;
        net.biases[1][0] = 0.0;
        let (_, cache) = net.forward(&DVector::from_element(1, 0.0)).unwrap();
        let (_, input_grad) = net.backward(&cache, &DVector::from_element(1, 1.0)).unwrap();
        assert!((input_grad[0] - 1.0).abs() < 1e-15);
    }

    /// Central finite differences over every parameter of a small net.
    fn finite_difference_check(output: OutputActivation, seed: u64) {
        let spec = MlpSpec::new(vec![3, 5, 4], output).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MlpParams::init(spec, &mut rng);
        let x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        // Scalar loss: weighted sum of outputs (weights fixed per seed).
        let probe = DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0));
        let loss = |net: &MlpParams| -> f64 { probe.dot(&net.infer(&x).unwrap()) };

        let (_, cache) = net.forward(&x).unwrap();
        let (grad, _) = net.backward(&cache, &probe).unwrap();

        let eps = 1e-5;
        for l in 0..net.weights.len() {
            for idx in 0..net.weights[l].len() {
                let orig = net.weights[l][idx];
                net.weights[l][idx] = orig + eps;
                let up = loss(&net);
                net.weights[l][idx] = orig - eps;
                let down = loss(&net);
                net.weights[l][idx] = orig;
                let fd = (up - down) / (2.0 * eps);
                let analytic = grad.d_weights[l][idx];
                assert!(
                    (fd - analytic).abs() <= 1e-4 * fd.abs().max(analytic.abs()).max(1e-6),
                    "layer {l} weight {idx}: fd {fd} vs analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        finite_difference_check(OutputActivation::Linear, 7);
        finite_difference_check(OutputActivation::LinearSoftplus { linear: 2 }, 8);
    }

    #[test]
    fn rejects_bad_shapes() {
        let spec = MlpSpec::new(vec![2, 3], OutputActivation::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = MlpParams::init(spec, &mut rng);
        assert!(net.forward(&DVector::zeros(5)).is_err());
        assert!(MlpSpec::new(vec![2], OutputActivation::Linear).is_err());
    }
}
