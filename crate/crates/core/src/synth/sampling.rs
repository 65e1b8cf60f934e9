//! Measurement locations, collocation designs and observation noise.

use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid2D, Point};

/// How measurement locations are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    /// Distinct cell centroids drawn uniformly without replacement.
    RandomCentroids,
    /// One point per stratum along each axis of the domain.
    LatinHypercube,
}

/// Distinct cells drawn uniformly without replacement.
pub fn random_cells(grid: &Grid2D, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > grid.n_cells() {
        return Err(Error::InvalidConfig(format!(
            "cannot draw {n} distinct centroids from {} cells",
            grid.n_cells()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, grid.n_cells(), n).into_vec())
}

/// Latin hypercube design of `n` points in the box `[lo, hi]`. Each of the
/// `n` equal strata of either axis holds exactly one point, and every point
/// lies strictly inside its stratum.
pub fn latin_hypercube(n: usize, lo: Point, hi: Point, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axis = |rng: &mut ChaCha8Rng, a: f64, b: f64| {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        strata
            .into_iter()
            .map(|s| {
                let t: f64 = rng.sample(Open01);
                a + (b - a) * (s as f64 + t) / n as f64
            })
            .collect::<Vec<f64>>()
    };
    let xs = axis(&mut rng, lo[0], hi[0]);
    let ys = axis(&mut rng, lo[1], hi[1]);
    xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect()
}

/// Measurement locations under `scheme`, deterministic in `seed`.
pub fn sample_measurement_locations(
    grid: &Grid2D,
    n: usize,
    seed: u64,
    scheme: SamplingScheme,
) -> Result<Vec<Point>> {
    match scheme {
        SamplingScheme::RandomCentroids => {
            Ok(random_cells(grid, n, seed)?.into_iter().map(|c| grid.centroid(c)).collect())
        }
        SamplingScheme::LatinHypercube => Ok(latin_hypercube(n, [0.0, 0.0], [grid.lx, grid.ly], seed)),
    }
}

/// How observation noise enters the values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    /// `v (1 + level xi)`
    #[default]
    Multiplicative,
    /// `v + level xi`
    Additive,
}

/// Multiplicative Gaussian noise: `v_i (1 + level xi_i)`, `xi_i ~ N(0, 1)`.
pub fn add_noise(values: &[f64], level: f64, seed: u64) -> Result<Vec<f64>> {
    add_noise_with(values, level, seed, NoiseModel::Multiplicative)
}

pub fn add_noise_with(values: &[f64], level: f64, seed: u64, model: NoiseModel) -> Result<Vec<f64>> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise level must be >= 0, got {level}")));
    }
    if level == 0.0 {
        return Ok(values.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(values
        .iter()
        .map(|&v| {
            let xi: f64 = rng.sample(StandardNormal);
            match model {
                NoiseModel::Multiplicative => v * (1.0 + level * xi),
                NoiseModel::Additive => v + level * xi,
            }
        })
        .collect())
}
