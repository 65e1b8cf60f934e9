//! The two inverse problems: a space-dependent coefficient `K(x)` in a linear
//! diffusion equation and a state-dependent closure `K(u)` in a nonlinear one.
//!
//! Both are posed as the joint training of a state surrogate `u(x)` and a
//! coefficient surrogate against measurements, boundary data and the PDE
//! residual at collocation points.

mod build;
mod loss;
mod metrics;
mod residual;
mod surrogate;
mod train;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use build::{
    build_linear_problem, build_nonlinear_problem, observe, reference_fields, NoiseConfig, NondimScaling,
    ProblemConfig, ProblemSetup, Reference,
};
pub use loss::{assemble_loss, loss_and_gradient, LossBreakdown};
pub use metrics::{relative_error, relative_error_1d, ErrorReport};
pub use residual::{linear_neumann_flux, linear_residual, nonlinear_neumann_flux, nonlinear_residual};
pub use surrogate::{AffineMap, PinnModel, Surrogate};
pub use train::{train, TrainOutcome};

use crate::error::{Error, Result};
use crate::grid::{parse_f64, Edge, Grid2D, Point};

/// Which of the two problems is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// `div(K(x) grad u) = 0`
    #[default]
    Linear,
    /// `div(K(u) grad u) = 0`
    Nonlinear,
}

/// Point observations of a scalar.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Observations {
    pub points: Vec<Point>,
    pub values: Vec<f64>,
}

impl Observations {
    pub fn new(points: Vec<Point>, values: Vec<f64>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: values.len(),
            });
        }
        Ok(Self { points, values })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// One `x y value` line per observation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (p, v) in self.points.iter().zip(&self.values) {
            writeln!(out, "{:.16e} {:.16e} {:.16e}", p[0], p[1], v).expect("writing to a String cannot fail");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut obs = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 3 {
                return Err(Error::Parse(format!(
                    "measurement line {} needs `x y value`, got `{line}`",
                    n + 1
                )));
            }
            obs.points.push([parse_f64(tok[0])?, parse_f64(tok[1])?]);
            obs.values.push(parse_f64(tok[2])?);
        }
        Ok(obs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Prescribed flux samples on Neumann edges. `values[i]` is the target of the
/// flux component normal to `edges[i]` (see the residual functions for the
/// per-problem definition of that component).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeumannObservations {
    pub points: Vec<Point>,
    pub values: Vec<f64>,
    pub edges: Vec<Edge>,
}

impl NeumannObservations {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `n` evenly spaced samples with target `value` on `edge`.
    pub fn push_edge(&mut self, grid: &Grid2D, edge: Edge, n: usize, value: f64) {
        for p in grid.edge_points(edge, n) {
            self.points.push(p);
            self.values.push(value);
            self.edges.push(edge);
        }
    }

    /// Reads `x y value` lines and assigns each point to the edge it lies on.
    pub fn from_observations(grid: &Grid2D, obs: Observations) -> Result<Self> {
        let mut edges = Vec::with_capacity(obs.len());
        for p in &obs.points {
            let edge = Edge::ALL
                .into_iter()
                .find(|&e| grid.on_edge(*p, e))
                .ok_or_else(|| Error::OffBoundary {
                    x: p[0],
                    y: p[1],
                    boundary: "any".into(),
                })?;
            edges.push(edge);
        }
        Ok(Self {
            points: obs.points,
            values: obs.values,
            edges,
        })
    }

    pub fn observations(&self) -> Observations {
        Observations {
            points: self.points.clone(),
            values: self.values.clone(),
        }
    }
}

/// All data entering the loss: coefficient and state measurements,
/// Dirichlet samples `g*` and Neumann flux samples `q*`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementSet {
    pub k: Observations,
    pub u: Observations,
    pub dirichlet: Observations,
    pub neumann: NeumannObservations,
}

impl MeasurementSet {
    /// Checks that every location is inside the domain and that boundary
    /// samples lie on their edge.
    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        for obs in [&self.k, &self.u, &self.dirichlet] {
            if obs.points.len() != obs.values.len() {
                return Err(Error::DimensionMismatch {
                    expected: obs.points.len(),
                    got: obs.values.len(),
                });
            }
            if let Some(p) = obs.points.iter().find(|p| !grid.contains(**p)) {
                return Err(Error::InvalidConfig(format!(
                    "measurement location ({}, {}) lies outside the domain",
                    p[0], p[1]
                )));
            }
        }
        let n = &self.neumann;
        if n.points.len() != n.values.len() || n.points.len() != n.edges.len() {
            return Err(Error::DimensionMismatch {
                expected: n.points.len(),
                got: n.values.len().min(n.edges.len()),
            });
        }
        for (p, e) in n.points.iter().zip(&n.edges) {
            if !grid.on_edge(*p, *e) {
                return Err(Error::OffBoundary {
                    x: p[0],
                    y: p[1],
                    boundary: e.name().into(),
                });
            }
        }
        Ok(())
    }
}

/// Interior collocation points where the PDE residual is penalized. The
/// boundary collocation points of the flux terms are the Neumann samples of
/// the [`MeasurementSet`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollocationSet {
    pub interior: Vec<Point>,
}

impl CollocationSet {
    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        match self
            .interior
            .iter()
            .find(|p| !(p[0] > 0.0 && p[0] < grid.lx && p[1] > 0.0 && p[1] < grid.ly))
        {
            Some(p) => Err(Error::InvalidConfig(format!(
                "collocation point ({}, {}) is not strictly inside the domain",
                p[0], p[1]
            ))),
            None => Ok(()),
        }
    }
}

/// Toggle and weight of one loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermSpec {
    pub enabled: bool,
    pub weight: f64,
}

impl Default for TermSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            weight: 1.0,
        }
    }
}

impl TermSpec {
    pub const OFF: TermSpec = TermSpec {
        enabled: false,
        weight: 1.0,
    };
}

/// Which terms enter the loss and with what weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub data_k: TermSpec,
    pub data_u: TermSpec,
    pub dirichlet: TermSpec,
    pub neumann: TermSpec,
    pub residual: TermSpec,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self {
            data_k: TermSpec::default(),
            data_u: TermSpec::default(),
            dirichlet: TermSpec::default(),
            neumann: TermSpec::default(),
            residual: TermSpec::default(),
        }
    }
}

impl LossSpec {
    pub fn terms(&self) -> [(&'static str, TermSpec); 5] {
        [
            ("data_k", self.data_k),
            ("data_u", self.data_u),
            ("dirichlet", self.dirichlet),
            ("neumann", self.neumann),
            ("residual", self.residual),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let terms = self.terms();
        if !terms.iter().any(|(_, t)| t.enabled) {
            return Err(Error::InvalidConfig("at least one loss term must be enabled".into()));
        }
        if let Some((name, _)) = terms.iter().find(|(_, t)| !(t.weight >= 0.0 && t.weight.is_finite())) {
            return Err(Error::InvalidConfig(format!("weight of `{name}` must be >= 0")));
        }
        Ok(())
    }
}

/// A fully specified training problem. For the nonlinear kind every
/// quantity is in the dimensionless units of [`NondimScaling`].
#[derive(Debug, Clone, PartialEq)]
pub struct PinnProblem {
    pub kind: ProblemKind,
    /// Domain (and reference mesh) in the units the networks see.
    pub grid: Grid2D,
    pub measurements: MeasurementSet,
    pub collocation: CollocationSet,
    pub loss: LossSpec,
}

impl PinnProblem {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.measurements.validate(&self.grid)?;
        self.collocation.validate(&self.grid)?;
        let counts = [
            ("data_k", self.loss.data_k, self.measurements.k.len()),
            ("data_u", self.loss.data_u, self.measurements.u.len()),
            ("dirichlet", self.loss.dirichlet, self.measurements.dirichlet.len()),
            ("neumann", self.loss.neumann, self.measurements.neumann.len()),
            ("residual", self.loss.residual, self.collocation.interior.len()),
        ];
        if let Some((name, _, _)) = counts.iter().find(|(_, t, n)| t.enabled && *n == 0) {
            return Err(Error::EmptyTerm(name));
        }
        Ok(())
    }

    /// Switches off every term whose point set is empty.
    pub fn drop_empty_terms(&mut self) {
        let m = &self.measurements;
        let empty = [
            m.k.is_empty(),
            m.u.is_empty(),
            m.dirichlet.is_empty(),
            m.neumann.is_empty(),
            self.collocation.interior.is_empty(),
        ];
        let l = &mut self.loss;
        for (term, empty) in [
            &mut l.data_k,
            &mut l.data_u,
            &mut l.dirichlet,
            &mut l.neumann,
            &mut l.residual,
        ]
        .into_iter()
        .zip(empty)
        {
            if empty {
                term.enabled = false;
            }
        }
    }
}
