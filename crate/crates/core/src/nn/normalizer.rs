//! Streaming input normalization from running mean and standard deviation.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Single-pass, cancellation-safe mean/variance accumulator
/// (Welford's recurrences), used to scale network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningNormalizer {
    count: u64,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Sample variance (Bessel corrected); zero until two observations.
    pub fn variance(&self) -> DVector<f64> {
        if self.count < 2 {
            DVector::zeros(self.dim())
        } else {
            &self.m2 / (self.count - 1) as f64
        }
    }

    pub fn update(&mut self, observation: &DVector<f64>) -> Result<()> {
        if observation.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "normalizer expects {} features, got {}",
                self.dim(),
                observation.len()
            )));
        }
        self.count += 1;
        for i in 0..self.dim() {
            let delta = observation[i] - self.mean[i];
            self.mean[i] += delta / self.count as f64;
            self.m2[i] += delta * (observation[i] - self.mean[i]);
        }
        Ok(())
    }

    /// `(x - mean) / max(std, 1e-6)`; the identity shift until the
    /// variance estimate exists.
    pub fn normalize(&self, observation: &DVector<f64>) -> Result<DVector<f64>> {
        if observation.len() != self.dim() {
            return Err(Error::Dimension("normalize feature width mismatch".into()));
        }
        if self.count < 2 {
            return Ok(observation - &self.mean);
        }
        let var = self.variance();
        Ok(DVector::from_fn(self.dim(), |i, _| {
            (observation[i] - self.mean[i]) / var[i].sqrt().max(1e-6)
        }))
    }

    pub(crate) fn from_raw(count: u64, mean: DVector<f64>, m2: DVector<f64>) -> Self {
        Self { count, mean, m2 }
    }

    pub(crate) fn raw(&self) -> (u64, &DVector<f64>, &DVector<f64>) {
        (self.count, &self.mean, &self.m2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_stream_mean_and_variance() {
        let mut norm = RunningNormalizer::new(1);
        for x in [1.0, 2.0, 3.0] {
            norm.update(&DVector::from_element(1, x)).unwrap();
        }
        assert!((norm.mean()[0] - 2.0).abs() < 1e-15);
        assert!((norm.variance()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_normalizes_to_zero() {
        let mut norm = RunningNormalizer::new(2);
        for x in [[1.0, -4.0], [5.0, 0.0], [3.0, 2.0]] {
            norm.update(&DVector::from_column_slice(&x)).unwrap();
        }
        let mean = norm.mean().clone();
        let z = norm.normalize(&mean).unwrap();
        assert!(z.norm() < 1e-14);
    }

    #[test]
    fn streaming_matches_two_pass() {
        // Two-pass oracle on 10^4 pseudo-random values.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut norm = RunningNormalizer::new(1);
        for &x in &data {
            norm.update(&DVector::from_element(1, x)).unwrap();
        }
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (data.len() - 1) as f64;
        assert!((norm.mean()[0] - mean).abs() < 1e-10);
        assert!((norm.variance()[0] - var).abs() < 1e-10);
    }

    #[test]
    fn rejects_width_mismatch() {
        let mut norm = RunningNormalizer::new(3);
        assert!(norm.update(&DVector::zeros(2)).is_err());
        assert!(norm.normalize(&DVector::zeros(4)).is_err());
    }
}
