//! Linear variance schedule with cumulative products.
//!
//! Steps are 1-based: `beta(1)` is the first (smallest) variance and
//! `gamma(t) = alpha(1) * ... * alpha(t)`.

use crate::error::{Error, Result};

/// Variance endpoints used for both the training and the sampling schedule.
pub const DEFAULT_BETA_START: f64 = 1e-6;
pub const DEFAULT_BETA_END: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    gamma: Vec<f64>,
}

impl NoiseSchedule {
    /// `beta_t = beta_start + (t-1)/(T-1) * (beta_end - beta_start)`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "schedule endpoints must satisfy 0 < start <= end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + i as f64 / (steps - 1) as f64 * (beta_end - beta_start)
                }
            })
            .collect();
        Ok(Self::from_betas(beta))
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let gamma = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Self { beta, alpha, gamma }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.index(t)?])
    }

    /// Cumulative product `alpha(1) * ... * alpha(t)`.
    pub fn gamma_at(&self, t: usize) -> Result<f64> {
        Ok(self.gamma[self.index(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gamma
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let s = NoiseSchedule::linear(1, 0.01, 0.01).unwrap();
        assert_eq!(s.gamma_at(1).unwrap(), 0.99);
    }

    #[test]
    fn endpoints_and_monotonicity() {
        let s = NoiseSchedule::linear(2000, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        assert_eq!(s.beta(1).unwrap(), 1e-6);
        assert!((s.beta(2000).unwrap() - 1e-2).abs() < 1e-17);
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
        assert!(s.gammas().windows(2).all(|w| w[1] < w[0]));
        assert_eq!(s.gamma_at(1).unwrap(), s.alpha(1).unwrap());
        assert!(s.alphas().iter().all(|&a| a > 0.0 && a < 1.0));
        let last = s.gamma_at(2000).unwrap();
        assert!(last > 0.0 && last < 1e-3, "{last}");
    }

    #[test]
    fn recurrence() {
        let s = NoiseSchedule::linear(500, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap();
        for t in 2..=500 {
            let prev = s.gamma_at(t - 1).unwrap() * s.alpha(t).unwrap();
            assert!((s.gamma_at(t).unwrap() - prev).abs() <= 1e-15);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(NoiseSchedule::linear(0, 1e-6, 1e-2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 1e-2).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 1e-6, 1.0).is_err());
        let s = NoiseSchedule::linear(10, 1e-6, 1e-2).unwrap();
        assert!(s.gamma_at(0).is_err());
        assert!(s.gamma_at(11).is_err());
    }

    proptest::proptest! {
        #[test]
        fn gamma_decreasing_in_unit_interval(steps in 1usize..3000, start in 1e-8f64..1e-3, span in 0.0f64..0.05) {
            let s = NoiseSchedule::linear(steps, start, start + span).unwrap();
            let g = s.gammas();
            proptest::prop_assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
            proptest::prop_assert!(g.windows(2).all(|w| w[1] < w[0]));
            proptest::prop_assert_eq!(s.gamma_at(1).unwrap(), s.alpha(1).unwrap());
        }
    }
}
