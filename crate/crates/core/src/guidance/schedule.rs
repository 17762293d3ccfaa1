use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// w(t) = sigma_t^2
    SigmaSquared,
    /// w(t) = 1
    Unit,
}

impl FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma2" => Ok(Weighting::SigmaSquared),
            "unit" => Ok(Weighting::Unit),
            other => Err(Error::InvalidInput(format!("unknown weighting `{other}`"))),
        }
    }
}

/// Variance-preserving noise schedule: `z_t = alpha_t x + sigma_t eps` with
/// `alpha_t^2 + sigma_t^2 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepSchedule {
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    weight: Vec<f64>,
}

impl TimestepSchedule {
    /// Linear-beta schedule over `steps` timesteps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64, weighting: Weighting) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidInput("schedule needs at least 2 timesteps".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidInput(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let mut alpha = Vec::with_capacity(steps);
        let mut sigma = Vec::with_capacity(steps);
        let mut alpha_bar = 1.0;
        for t in 0..steps {
            let beta = beta_start + (beta_end - beta_start) * t as f64 / (steps - 1) as f64;
            alpha_bar *= 1.0 - beta;
            alpha.push(alpha_bar.sqrt());
            sigma.push((1.0 - alpha_bar).sqrt());
        }
        let weight = sigma
            .iter()
            .map(|s| match weighting {
                Weighting::SigmaSquared => s * s,
                Weighting::Unit => 1.0,
            })
            .collect();
        Self::from_arrays(alpha, sigma, weight)
    }

    pub fn from_arrays(alpha: Vec<f64>, sigma: Vec<f64>, weight: Vec<f64>) -> Result<Self> {
        let n = alpha.len();
        if n == 0 || sigma.len() != n || weight.len() != n {
            return Err(Error::dimension(
                "TimestepSchedule arrays",
                n,
                format!("{}/{}", sigma.len(), weight.len()),
            ));
        }
        for t in 0..n {
            if ((alpha[t] * alpha[t] + sigma[t] * sigma[t]) - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "schedule is not variance preserving at t={t}"
                )));
            }
            if !(weight[t] > 0.0) {
                return Err(Error::InvalidInput(format!("weight must be > 0 at t={t}")));
            }
            if t > 0 && !(alpha[t] < alpha[t - 1]) {
                return Err(Error::InvalidInput(format!(
                    "alpha must be strictly decreasing (t={t})"
                )));
            }
        }
        Ok(Self {
            alpha,
            sigma,
            weight,
        })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.weight[t]
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t < self.len() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "timestep {t} outside schedule of length {}",
                self.len()
            )))
        }
    }
}

impl Default for TimestepSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 2e-2, Weighting::SigmaSquared).expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_is_variance_preserving_and_monotone() {
        let s = TimestepSchedule::default();
        assert_eq!(s.len(), 1000);
        for t in 0..s.len() {
            assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() <= 1e-9);
            assert!(s.weight(t) > 0.0);
            if t > 0 {
                assert!(s.alpha(t) < s.alpha(t - 1));
            }
        }
        assert!((s.weight(10) - s.sigma(10).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_monotone_arrays() {
        let a = vec![0.6, 0.8];
        let s = vec![0.8, 0.6];
        assert!(TimestepSchedule::from_arrays(a, s, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn rejects_bad_betas() {
        assert!(TimestepSchedule::linear(10, 0.0, 0.1, Weighting::Unit).is_err());
        assert!(TimestepSchedule::linear(10, 0.2, 0.1, Weighting::Unit).is_err());
    }
}
