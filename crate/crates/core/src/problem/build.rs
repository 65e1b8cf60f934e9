//! Problem setups: reference fields, measurements, boundary samples and
//! collocation points, assembled from one JSON configuration.

use serde::{Deserialize, Serialize};

use super::{
    relative_error, relative_error_1d, CollocationSet, ErrorReport, LossSpec, MeasurementSet, NeumannObservations,
    Observations, PinnModel, PinnProblem, ProblemKind,
};
use crate::error::{Error, Result};
use crate::grid::{Edge, Field, Grid2D, Point};
use crate::synth::{
    add_noise_with, fv_solve_linear, fv_solve_vangenuchten, latin_hypercube, random_cells, sample_gp_lnk,
    BoundarySpec, EdgeCondition, GpConfig, NoiseModel, PicardConfig, VanGenuchtenParams,
};

/// Observation noise applied to every measured value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub level: f64,
    pub model: NoiseModel,
}

/// Everything needed to generate data for one problem and pose it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Defaults to 32 x 32 cells on the unit square (linear) or on a
    /// 10 m x 10 m square (nonlinear).
    pub grid: Option<Grid2D>,
    /// Defaults to the standard scenario of the problem kind.
    pub boundary: Option<BoundarySpec>,
    pub gp: GpConfig,
    pub vg: VanGenuchtenParams,
    pub picard: PicardConfig,
    /// Coefficient measurements; defaults to 250 (linear) or 0 (nonlinear).
    pub n_k: Option<usize>,
    pub n_u: usize,
    /// Interior collocation points.
    pub n_c: usize,
    /// Dirichlet and Neumann samples per boundary edge.
    pub n_boundary: usize,
    pub measurement_seed: u64,
    pub collocation_seed: u64,
    pub noise_seed: u64,
    pub noise: NoiseConfig,
    pub loss: LossSpec,
    pub hidden: Vec<usize>,
    /// Pass the coefficient network output through softplus.
    pub positive_k: bool,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Linear,
            grid: None,
            boundary: None,
            gp: GpConfig::default(),
            vg: VanGenuchtenParams::default(),
            picard: PicardConfig::default(),
            n_k: None,
            n_u: 100,
            n_c: 1024,
            n_boundary: 32,
            measurement_seed: 0,
            collocation_seed: 0,
            noise_seed: 0,
            noise: NoiseConfig::default(),
            loss: LossSpec::default(),
            hidden: vec![50, 50],
            positive_k: false,
        }
    }
}

impl ProblemConfig {
    pub fn nonlinear() -> Self {
        Self {
            kind: ProblemKind::Nonlinear,
            ..Self::default()
        }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid.unwrap_or(match self.kind {
            ProblemKind::Linear => Grid2D::unit_square(32),
            ProblemKind::Nonlinear => Grid2D {
                nx: 32,
                ny: 32,
                lx: 10.0,
                ly: 10.0,
            },
        })
    }

    pub fn boundary(&self) -> BoundarySpec {
        self.boundary.unwrap_or(match self.kind {
            ProblemKind::Linear => BoundarySpec::linear_default(),
            ProblemKind::Nonlinear => BoundarySpec::unsaturated(self.vg.u0, self.vg.q),
        })
    }

    pub fn n_k(&self) -> usize {
        self.n_k.unwrap_or(match self.kind {
            ProblemKind::Linear => 250,
            ProblemKind::Nonlinear => 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().validate()?;
        self.loss.validate()?;
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "hidden widths must be a nonempty list of positive sizes, got {:?}",
                self.hidden
            )));
        }
        if !self.boundary().has_dirichlet() {
            return Err(Error::InvalidConfig("at least one edge needs a Dirichlet condition".into()));
        }
        match self.kind {
            ProblemKind::Linear => self.gp.validate(),
            ProblemKind::Nonlinear => self.vg.validate(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Affine change of units between the physical problem and the one the
/// networks see: `x' = x / length`, `u' = (u - u_center) / u_half`,
/// `K' = K / k_ref`. The identity for the linear problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondimScaling {
    pub length: f64,
    pub u_center: f64,
    pub u_half: f64,
    pub k_ref: f64,
}

impl Default for NondimScaling {
    fn default() -> Self {
        Self {
            length: 1.0,
            u_center: 0.0,
            u_half: 1.0,
            k_ref: 1.0,
        }
    }
}

impl NondimScaling {
    /// Maps the observed state range onto `[-1, 1]` and chooses `k_ref` so
    /// that a boundary flux of magnitude `q` becomes 1.
    pub fn from_observations(u_values: &[f64], length: f64, q: f64) -> Self {
        let lo = u_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = u_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (u_center, u_half) = if hi > lo {
            (0.5 * (lo + hi), 0.5 * (hi - lo))
        } else if lo.is_finite() {
            (lo, 1.0)
        } else {
            (0.0, 1.0)
        };
        let k_ref = if q != 0.0 { q.abs() * length / u_half } else { 1.0 };
        Self {
            length,
            u_center,
            u_half,
            k_ref,
        }
    }

    pub fn point_to(&self, p: Point) -> Point {
        [p[0] / self.length, p[1] / self.length]
    }

    pub fn u_to(&self, u: f64) -> f64 {
        (u - self.u_center) / self.u_half
    }

    pub fn u_from(&self, v: f64) -> f64 {
        self.u_center + self.u_half * v
    }

    pub fn k_to(&self, k: f64) -> f64 {
        k / self.k_ref
    }

    pub fn k_from(&self, v: f64) -> f64 {
        self.k_ref * v
    }

    /// Physical flux that corresponds to a unit dimensionless flux.
    pub fn flux_ref(&self) -> f64 {
        self.k_ref * self.u_half / self.length
    }

    pub fn grid_to(&self, g: &Grid2D) -> Grid2D {
        Grid2D {
            nx: g.nx,
            ny: g.ny,
            lx: g.lx / self.length,
            ly: g.ly / self.length,
        }
    }
}

/// Reference state and coefficient on the cells. For the nonlinear problem
/// the coefficient field is `K(u(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub u: Field,
    pub k: Field,
}

/// A posed problem together with the data it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSetup {
    pub config: ProblemConfig,
    /// Physical mesh.
    pub grid: Grid2D,
    pub scaling: NondimScaling,
    /// The training problem, in scaled units.
    pub problem: PinnProblem,
    /// Measured values in physical units, including noise.
    pub observed_k: Observations,
    pub observed_u: Observations,
    pub reference: Option<Reference>,
}

/// Decorrelates the seed streams that share one user-facing seed.
fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reference fields for the configured problem kind.
pub fn reference_fields(cfg: &ProblemConfig) -> Result<Reference> {
    cfg.validate()?;
    let grid = cfg.grid();
    match cfg.kind {
        ProblemKind::Linear => {
            let k = sample_gp_lnk(grid, &cfg.gp)?.map(f64::exp);
            let u = fv_solve_linear(&k, &cfg.boundary())?;
            Ok(Reference { u, k })
        }
        ProblemKind::Nonlinear => {
            let (u, _) = fv_solve_vangenuchten(grid, &cfg.vg, &cfg.boundary(), &cfg.picard)?;
            let k = u.map(|v| cfg.vg.conductivity(v));
            Ok(Reference { u, k })
        }
    }
}

/// Noisy point measurements of the reference fields at distinct random
/// centroids.
pub fn observe(cfg: &ProblemConfig, reference: &Reference) -> Result<(Observations, Observations)> {
    let grid = reference.u.grid;
    let sample = |field: &Field, n: usize, tag: u64| -> Result<Observations> {
        let cells = random_cells(&grid, n, derive_seed(cfg.measurement_seed, tag))?;
        let exact: Vec<f64> = cells.iter().map(|&c| field.values[c]).collect();
        let values = add_noise_with(&exact, cfg.noise.level, derive_seed(cfg.noise_seed, tag), cfg.noise.model)?;
        Observations::new(cells.iter().map(|&c| grid.centroid(c)).collect(), values)
    };
    Ok((sample(&reference.k, cfg.n_k(), 1)?, sample(&reference.u, cfg.n_u, 2)?))
}

/// Generates reference data and measurements and poses the linear problem.
pub fn build_linear_problem(cfg: &ProblemConfig) -> Result<ProblemSetup> {
    expect_kind(cfg, ProblemKind::Linear)?;
    build(cfg)
}

/// Generates reference data and measurements and poses the nonlinear problem.
pub fn build_nonlinear_problem(cfg: &ProblemConfig) -> Result<ProblemSetup> {
    expect_kind(cfg, ProblemKind::Nonlinear)?;
    build(cfg)
}

fn expect_kind(cfg: &ProblemConfig, kind: ProblemKind) -> Result<()> {
    if cfg.kind != kind {
        return Err(Error::InvalidConfig(format!(
            "configuration is for the {:?} problem, expected {kind:?}",
            cfg.kind
        )));
    }
    Ok(())
}

fn build(cfg: &ProblemConfig) -> Result<ProblemSetup> {
    let reference = reference_fields(cfg)?;
    let (k, u) = observe(cfg, &reference)?;
    ProblemSetup::from_observations(cfg, k, u, Some(reference))
}

impl ProblemSetup {
    /// Poses the problem from given measurements (physical units).
    pub fn from_observations(
        cfg: &ProblemConfig,
        observed_k: Observations,
        observed_u: Observations,
        reference: Option<Reference>,
    ) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid();
        let bc = cfg.boundary();
        let scaling = match cfg.kind {
            ProblemKind::Linear => NondimScaling::default(),
            ProblemKind::Nonlinear => {
                let q = Edge::ALL
                    .iter()
                    .filter_map(|&e| match bc.get(e) {
                        EdgeCondition::Influx(q) => Some(q.abs()),
                        _ => None,
                    })
                    .fold(0.0, f64::max);
                NondimScaling::from_observations(&observed_u.values, grid.lx, q)
            }
        };
        let scaled = |obs: &Observations, f: &dyn Fn(f64) -> f64| Observations {
            points: obs.points.iter().map(|&p| scaling.point_to(p)).collect(),
            values: obs.values.iter().map(|&v| f(v)).collect(),
        };

        let mut measurements = MeasurementSet {
            k: scaled(&observed_k, &|v| scaling.k_to(v)),
            u: scaled(&observed_u, &|v| scaling.u_to(v)),
            dirichlet: Observations::default(),
            neumann: NeumannObservations::default(),
        };
        for edge in Edge::ALL {
            let points = grid.edge_points(edge, cfg.n_boundary);
            match bc.get(edge) {
                EdgeCondition::Dirichlet(g) => {
                    for p in points {
                        measurements.dirichlet.points.push(scaling.point_to(p));
                        measurements.dirichlet.values.push(scaling.u_to(g));
                    }
                }
                cond => {
                    let target = flux_target(cfg.kind, edge, cond, &scaling)?;
                    for p in points {
                        measurements.neumann.points.push(scaling.point_to(p));
                        measurements.neumann.values.push(target);
                        measurements.neumann.edges.push(edge);
                    }
                }
            }
        }

        let scaled_grid = scaling.grid_to(&grid);
        let collocation = CollocationSet {
            interior: latin_hypercube(cfg.n_c, [0.0, 0.0], [scaled_grid.lx, scaled_grid.ly], cfg.collocation_seed),
        };
        let mut problem = PinnProblem {
            kind: cfg.kind,
            grid: scaled_grid,
            measurements,
            collocation,
            loss: cfg.loss,
        };
        problem.drop_empty_terms();
        problem.validate()?;
        Ok(Self {
            config: cfg.clone(),
            grid,
            scaling,
            problem,
            observed_k,
            observed_u,
            reference,
        })
    }

    /// Fresh networks for restart `seed`.
    pub fn model(&self, seed: u64) -> Result<PinnModel> {
        PinnModel::new(
            self.config.kind,
            &self.problem.grid,
            &self.config.hidden,
            seed,
            self.config.positive_k,
        )
    }

    fn scaled_centroids(&self) -> Vec<Point> {
        self.grid
            .centroids()
            .into_iter()
            .map(|p| self.scaling.point_to(p))
            .collect()
    }

    /// State surrogate at the cell centroids, in physical units.
    pub fn predict_u(&self, model: &PinnModel) -> Field {
        let values = model
            .predict_u(&self.scaled_centroids())
            .into_iter()
            .map(|v| self.scaling.u_from(v))
            .collect();
        Field {
            grid: self.grid,
            values,
        }
    }

    /// Coefficient surrogate at the cell centroids, in physical units. For
    /// the nonlinear problem this is `K(u(x))` with both surrogates.
    pub fn predict_k(&self, model: &PinnModel) -> Field {
        let scaled = match self.config.kind {
            ProblemKind::Linear => model.predict_k_at(&self.scaled_centroids()),
            ProblemKind::Nonlinear => model.predict_k_of(&model.predict_u(&self.scaled_centroids())),
        };
        Field {
            grid: self.grid,
            values: scaled.into_iter().map(|v| self.scaling.k_from(v)).collect(),
        }
    }

    /// The learned closure `K(u)` at physical states (nonlinear problem).
    pub fn k_curve(&self, model: &PinnModel, states: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = states.iter().map(|&u| self.scaling.u_to(u)).collect();
        model
            .predict_k_of(&scaled)
            .into_iter()
            .map(|v| self.scaling.k_from(v))
            .collect()
    }

    /// Errors against the reference data. For the nonlinear problem the
    /// coefficient error compares the closures `K(u)` over the state range
    /// of the reference solution.
    pub fn evaluate(&self, model: &PinnModel) -> Result<ErrorReport> {
        let reference = self
            .reference
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("no reference fields to evaluate against".into()))?;
        let u_hat = self.predict_u(model);
        let k_hat = self.predict_k(model);
        let eps_u = relative_error(&u_hat, &reference.u)?;
        let eps_k = match self.config.kind {
            ProblemKind::Linear => relative_error(&k_hat, &reference.k)?,
            ProblemKind::Nonlinear => {
                let vg = self.config.vg;
                let (lo, hi) = (reference.u.min(), reference.u.max());
                let n = 1000;
                let h = (hi - lo) / n as f64;
                let states: Vec<f64> = (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect();
                let curve = self.k_curve(model, &states);
                let lookup = |u: f64| curve[(((u - lo) / h) as usize).min(n - 1)];
                relative_error_1d(lookup, |u| vg.conductivity(u), lo, hi, n)?
            }
        };
        let abs_diff = |a: &Field, b: &Field| Field {
            grid: a.grid,
            values: a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).collect(),
        };
        Ok(ErrorReport {
            eps_u,
            eps_k,
            u_abs_error: abs_diff(&u_hat, &reference.u),
            k_abs_error: abs_diff(&k_hat, &reference.k),
        })
    }
}

/// Dimensionless target of the flux component checked on `edge`.
fn flux_target(kind: ProblemKind, edge: Edge, cond: EdgeCondition, scaling: &NondimScaling) -> Result<f64> {
    let influx = match cond {
        EdgeCondition::NoFlow => 0.0,
        EdgeCondition::Influx(q) => q,
        EdgeCondition::Dirichlet(_) => unreachable!("Dirichlet edges carry no flux samples"),
    };
    match kind {
        ProblemKind::Linear => {
            if influx != 0.0 || !matches!(edge, Edge::West | Edge::East) {
                return Err(Error::InvalidConfig(format!(
                    "the linear problem supports no-flow conditions on the west and east edges only, got {cond:?} on {}",
                    edge.name()
                )));
            }
            Ok(0.0)
        }
        ProblemKind::Nonlinear => {
            // Influx through an edge whose outward normal points in the
            // negative coordinate direction is a positive flux component.
            let sign = match edge {
                Edge::West | Edge::South => 1.0,
                Edge::East | Edge::North => -1.0,
            };
            Ok(sign * influx / scaling.flux_ref())
        }
    }
}
