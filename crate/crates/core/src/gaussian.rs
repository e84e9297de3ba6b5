//! Isotropic Gaussian noise on reported covariates.

use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI, SQRT_2};

use crate::error::{Error, Result};

/// Standard deviation of the per-coordinate reporting noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Density of N(0, sigma^2) at `u`.
    pub fn pdf(&self, u: f64) -> f64 {
        let t = u / self.sigma;
        (-0.5 * t * t).exp() / (self.sigma * (2.0 * PI).sqrt())
    }

    /// Distribution function of N(0, sigma^2) at `u`.
    pub fn cdf(&self, u: f64) -> f64 {
        0.5 * libm::erfc(-u / (self.sigma * SQRT_2))
    }

    /// Derivative of the density, `-u / sigma^2 * pdf(u)`.
    pub fn pdf_prime(&self, u: f64) -> f64 {
        -u / self.variance() * self.pdf(u)
    }

    /// Largest value the density takes, `1 / (sigma sqrt(2 pi))`.
    pub fn pdf_max(&self) -> f64 {
        1.0 / (self.sigma * (2.0 * PI).sqrt())
    }
}

/// `sqrt(2 pi e)`, the constant in the noise-regime thresholds.
pub fn sqrt_two_pi_e() -> f64 {
    (2.0 * PI * E).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_sigma() {
        assert!(NoiseModel::new(0.0).is_err());
        assert!(NoiseModel::new(-1.0).is_err());
        assert!(NoiseModel::new(f64::NAN).is_err());
    }

    #[test]
    fn cdf_symmetry_and_limits() {
        let n = NoiseModel::new(3.3).unwrap();
        assert_eq!(n.cdf(0.0), 0.5);
        assert!((n.cdf(1.7) + n.cdf(-1.7) - 1.0).abs() < 1e-15);
        assert_eq!(n.cdf(1e9), 1.0);
        assert_eq!(n.cdf(-1e9), 0.0);
    }

    #[test]
    fn pdf_prime_matches_difference() {
        let n = NoiseModel::new(1.2).unwrap();
        for &u in &[-3.0, -0.4, 0.0, 0.9, 2.5] {
            let h = 1e-6;
            let fd = (n.pdf(u + h) - n.pdf(u - h)) / (2.0 * h);
            assert!((fd - n.pdf_prime(u)).abs() < 1e-9);
        }
    }

    #[test]
    fn pdf_prime_extremum() {
        // |phi'| peaks at u = sigma with value 1 / (sigma^2 sqrt(2 pi e))
        let n = NoiseModel::new(2.0).unwrap();
        let expected = 1.0 / (n.variance() * sqrt_two_pi_e());
        assert!((n.pdf_prime(2.0).abs() - expected).abs() < 1e-15);
    }
}
