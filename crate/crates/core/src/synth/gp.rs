//! Gaussian random fields with squared-exponential covariance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid2D};

/// Zero-mean process with covariance `sigma^2 exp(-|x - x'|^2 / (2 lambda^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub sigma: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            lambda: 0.15,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) || !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "GP needs sigma > 0 and lambda > 0, got sigma={} lambda={}",
                self.sigma, self.lambda
            )));
        }
        Ok(())
    }
}

/// Factored covariance over the centroids of a grid, reusable for many draws.
pub struct GpSampler {
    grid: Grid2D,
    sigma: f64,
    factor: Cholesky<f64, Dyn>,
    jitter: f64,
}

/// Relative diagonal jitter tried in turn before giving up.
const JITTER_LADDER: [f64; 7] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

impl GpSampler {
    /// Factors the correlation matrix over all centroids. The smallest jitter
    /// from 1e-12 to 1e-6 (relative to the variance) that admits a Cholesky
    /// factorization is used.
    pub fn new(grid: Grid2D, sigma: f64, lambda: f64) -> Result<Self> {
        GpConfig {
            sigma,
            lambda,
            seed: 0,
        }
        .validate()?;
        let pts = grid.centroids();
        let n = pts.len();
        let inv = 1.0 / (2.0 * lambda * lambda);
        let corr = DMatrix::from_fn(n, n, |i, j| {
            let dx = pts[i][0] - pts[j][0];
            let dy = pts[i][1] - pts[j][1];
            (-(dx * dx + dy * dy) * inv).exp()
        });
        for jitter in JITTER_LADDER {
            let mut m = corr.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(factor) = m.cholesky() {
                return Ok(Self {
                    grid,
                    sigma,
                    factor,
                    jitter,
                });
            }
        }
        Err(Error::Factorization(
            "covariance is not positive definite even with jitter 1e-6".into(),
        ))
    }

    /// Relative jitter that was needed for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter * self.sigma * self.sigma
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    /// One realization, deterministic in `seed`.
    pub fn sample(&self, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.grid.n_cells();
        let xi = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        let v = self.factor.l_dirty().lower_triangle() * xi;
        Field {
            grid: self.grid,
            values: v.iter().map(|x| self.sigma * x).collect(),
        }
    }
}

/// Draws `ln K` at the cell centroids.
pub fn sample_gp_lnk(grid: Grid2D, config: &GpConfig) -> Result<Field> {
    Ok(GpSampler::new(grid, config.sigma, config.lambda)?.sample(config.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanishing_variance_gives_a_vanishing_field() {
        let g = Grid2D::unit_square(8);
        let f = sample_gp_lnk(
            g,
            &GpConfig {
                sigma: 1e-12,
                lambda: 0.15,
                seed: 3,
            },
        )
        .unwrap();
        assert!(f.values.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let g = Grid2D::unit_square(8);
        let cfg = GpConfig {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(sample_gp_lnk(g, &cfg).unwrap(), sample_gp_lnk(g, &cfg).unwrap());
        let other = GpConfig { seed: 12, ..cfg };
        assert_ne!(sample_gp_lnk(g, &cfg).unwrap(), sample_gp_lnk(g, &other).unwrap());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let g = Grid2D::unit_square(4);
        assert!(GpSampler::new(g, 0.0, 0.1).is_err());
        assert!(GpSampler::new(g, 1.0, -0.1).is_err());
    }
}
