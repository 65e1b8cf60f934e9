//! Cell-centered finite-volume solves of `div(K grad u) = 0` with the
//! two-point flux approximation.

use serde::{Deserialize, Serialize};

use super::banded::{BandedCholesky, BandedSpd};
use super::vg::VanGenuchtenParams;
use crate::error::{Error, Result};
use crate::grid::{Edge, Face, Field, Grid2D};

/// Condition imposed on one boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeCondition {
    /// Prescribed value of `u`.
    Dirichlet(f64),
    /// Prescribed flux into the domain per unit edge length, `-n . K grad u = q`.
    Influx(f64),
    NoFlow,
}

/// One condition per edge of the rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub west: EdgeCondition,
    pub east: EdgeCondition,
    pub south: EdgeCondition,
    pub north: EdgeCondition,
}

impl BoundarySpec {
    /// `u = 1` at `x2 = 0`, `u = 0` at `x2 = ly`, no flow through the sides.
    pub fn linear_default() -> Self {
        Self {
            west: EdgeCondition::NoFlow,
            east: EdgeCondition::NoFlow,
            south: EdgeCondition::Dirichlet(1.0),
            north: EdgeCondition::Dirichlet(0.0),
        }
    }

    /// Influx `q` at `x1 = 0`, `u = u0` at `x1 = lx`, no flow at `x2 = 0, ly`.
    pub fn unsaturated(u0: f64, q: f64) -> Self {
        Self {
            west: EdgeCondition::Influx(q),
            east: EdgeCondition::Dirichlet(u0),
            south: EdgeCondition::NoFlow,
            north: EdgeCondition::NoFlow,
        }
    }

    pub fn get(&self, edge: Edge) -> EdgeCondition {
        match edge {
            Edge::West => self.west,
            Edge::East => self.east,
            Edge::South => self.south,
            Edge::North => self.north,
        }
    }

    pub fn has_dirichlet(&self) -> bool {
        Edge::ALL
            .iter()
            .any(|&e| matches!(self.get(e), EdgeCondition::Dirichlet(_)))
    }

    /// Smallest and largest Dirichlet value, if any edge carries one.
    pub fn dirichlet_range(&self) -> Option<(f64, f64)> {
        Edge::ALL
            .iter()
            .filter_map(|&e| match self.get(e) {
                EdgeCondition::Dirichlet(g) => Some(g),
                _ => None,
            })
            .fold(None, |acc, g| match acc {
                None => Some((g, g)),
                Some((lo, hi)) => Some((f64::min(lo, g), f64::max(hi, g))),
            })
    }
}

/// A Dirichlet boundary face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletFace {
    pub cell: usize,
    pub edge: Edge,
    pub transmissibility: f64,
    pub value: f64,
}

/// Assembled TPFA operator: face transmissibilities plus boundary terms.
#[derive(Debug, Clone)]
pub struct Tpfa {
    pub grid: Grid2D,
    pub faces: Vec<Face>,
    /// Transmissibility of each entry of `faces`.
    pub face_t: Vec<f64>,
    pub dirichlet: Vec<DirichletFace>,
    /// Prescribed inflow into each boundary cell.
    pub sources: Vec<(usize, f64)>,
}

impl Tpfa {
    /// Builds the operator from face conductivities. `face_k` gives the
    /// conductivity of an interior face, `boundary_k(cell, value)` that of a
    /// Dirichlet face holding `value` next to `cell`.
    pub fn assemble(
        grid: Grid2D,
        boundary: &BoundarySpec,
        face_k: impl Fn(&Face) -> f64,
        boundary_k: impl Fn(usize, f64) -> f64,
    ) -> Self {
        let faces = grid.faces();
        let face_t = faces.iter().map(|f| face_k(f) * f.length / f.spacing).collect();
        let mut dirichlet = Vec::new();
        let mut sources = Vec::new();
        for edge in Edge::ALL {
            let (length, half) = grid.edge_face(edge);
            for cell in grid.edge_cells(edge) {
                match boundary.get(edge) {
                    EdgeCondition::Dirichlet(value) => dirichlet.push(DirichletFace {
                        cell,
                        edge,
                        transmissibility: boundary_k(cell, value) * length / half,
                        value,
                    }),
                    EdgeCondition::Influx(q) => sources.push((cell, q * length)),
                    EdgeCondition::NoFlow => {}
                }
            }
        }
        Self {
            grid,
            faces,
            face_t,
            dirichlet,
            sources,
        }
    }

    /// Operator for a cell-wise conductivity with harmonic-mean faces.
    pub fn harmonic(k: &Field, boundary: &BoundarySpec) -> Result<Self> {
        check_positive(k)?;
        let kv = &k.values;
        Ok(Self::assemble(
            k.grid,
            boundary,
            |f| harmonic_mean(kv[f.lo], kv[f.hi]),
            |cell, _| kv[cell],
        ))
    }

    pub fn matrix(&self) -> BandedSpd {
        let n = self.grid.n_cells();
        let mut a = BandedSpd::zeros(n, self.grid.nx.min(n.saturating_sub(1)));
        for (f, &t) in self.faces.iter().zip(&self.face_t) {
            a.add(f.lo, f.lo, t);
            a.add(f.hi, f.hi, t);
            a.add(f.hi, f.lo, -t);
        }
        for d in &self.dirichlet {
            a.add(d.cell, d.cell, d.transmissibility);
        }
        a
    }

    pub fn rhs(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.grid.n_cells()];
        for d in &self.dirichlet {
            b[d.cell] += d.transmissibility * d.value;
        }
        for &(cell, inflow) in &self.sources {
            b[cell] += inflow;
        }
        b
    }

    /// Factors the operator; fails when no Dirichlet edge anchors the solution.
    pub fn factor(&self) -> Result<BandedCholesky> {
        if self.dirichlet.is_empty() {
            return Err(Error::Singular(
                "no Dirichlet boundary: the solution is defined only up to a constant".into(),
            ));
        }
        self.matrix().cholesky()
    }

    /// Solves `A u = b` with iterative refinement until the relative residual
    /// is at most 1e-12.
    pub fn solve_with(&self, chol: &BandedCholesky, a: &BandedSpd, b: &[f64]) -> Result<Vec<f64>> {
        let bnorm = l2(b);
        let mut u = chol.solve(b);
        for _ in 0..4 {
            let au = a.mul_vec(&u);
            let r: Vec<f64> = b.iter().zip(&au).map(|(p, q)| p - q).collect();
            if l2(&r) <= 1e-12 * bnorm.max(f64::MIN_POSITIVE) {
                return Ok(u);
            }
            let du = chol.solve(&r);
            u.iter_mut().zip(du).for_each(|(v, d)| *v += d);
        }
        Err(Error::NotConverged(
            "linear solve did not reach a relative residual of 1e-12".into(),
        ))
    }

    pub fn solve(&self) -> Result<Vec<f64>> {
        let chol = self.factor()?;
        self.solve_with(&chol, &self.matrix(), &self.rhs())
    }

    /// Flux from `lo` to `hi` across every interior face.
    pub fn face_fluxes(&self, u: &[f64]) -> Vec<f64> {
        self.faces
            .iter()
            .zip(&self.face_t)
            .map(|(f, &t)| t * (u[f.lo] - u[f.hi]))
            .collect()
    }

    /// Net outflow of every cell through all its faces (zero when balanced).
    pub fn cell_imbalance(&self, u: &[f64]) -> Vec<f64> {
        let mut net = vec![0.0; self.grid.n_cells()];
        for (f, q) in self.faces.iter().zip(self.face_fluxes(u)) {
            net[f.lo] += q;
            net[f.hi] -= q;
        }
        for d in &self.dirichlet {
            net[d.cell] += d.transmissibility * (u[d.cell] - d.value);
        }
        for &(cell, inflow) in &self.sources {
            net[cell] -= inflow;
        }
        net
    }

    /// Total flow entering through each edge (negative when leaving).
    pub fn edge_inflow(&self, u: &[f64], edge: Edge) -> f64 {
        let dirichlet: f64 = self
            .dirichlet
            .iter()
            .filter(|d| d.edge == edge)
            .map(|d| d.transmissibility * (d.value - u[d.cell]))
            .sum();
        let cells = self.grid.edge_cells(edge);
        let sources: f64 = self
            .sources
            .iter()
            .filter(|(c, _)| cells.contains(c))
            .map(|&(_, q)| q)
            .sum();
        dirichlet + sources
    }
}

fn check_positive(k: &Field) -> Result<()> {
    if let Some((c, v)) = k.values.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidConfig(format!(
            "conductivity must be positive and finite, cell {c} has {v}"
        )));
    }
    Ok(())
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Solves the linear problem for a cell-wise conductivity field.
pub fn fv_solve_linear(k: &Field, boundary: &BoundarySpec) -> Result<Field> {
    let u = Tpfa::harmonic(k, boundary)?.solve()?;
    Field::new(k.grid, u)
}

/// Settings of the damped Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PicardConfig {
    /// Fraction of the frozen-coefficient update applied per iteration.
    pub damping: f64,
    /// Convergence threshold on the largest applied update (units of `u`).
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            tolerance: 1e-8,
            max_iterations: 500,
        }
    }
}

/// Convergence record of a Picard solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    pub iterations: usize,
    /// Norm of the nonlinear residual `A(u) u - b(u)` before every iteration.
    pub residual_norms: Vec<f64>,
    /// Largest applied update per iteration.
    pub updates: Vec<f64>,
}

/// Frozen-coefficient operator with arithmetic-mean face conductivities of
/// `K(u)`; Dirichlet faces average the cell value with `K` at the boundary value.
pub fn vg_operator(grid: Grid2D, vg: &VanGenuchtenParams, boundary: &BoundarySpec, u: &[f64]) -> Tpfa {
    let kc: Vec<f64> = u.iter().map(|&v| vg.conductivity(v)).collect();
    Tpfa::assemble(
        grid,
        boundary,
        |f| 0.5 * (kc[f.lo] + kc[f.hi]),
        |cell, g| 0.5 * (kc[cell] + vg.conductivity(g)),
    )
}

/// Solves `div(K(u) grad u) = 0` by damped Picard iteration.
pub fn fv_solve_vangenuchten(
    grid: Grid2D,
    vg: &VanGenuchtenParams,
    boundary: &BoundarySpec,
    config: &PicardConfig,
) -> Result<(Field, PicardReport)> {
    vg.validate()?;
    if !(config.damping > 0.0 && config.damping <= 1.0) || !(config.tolerance > 0.0) {
        return Err(Error::InvalidConfig(
            "Picard damping must lie in (0, 1] and the tolerance be positive".into(),
        ));
    }
    let (lo, hi) = boundary.dirichlet_range().ok_or_else(|| {
        Error::Singular("no Dirichlet boundary: the solution is defined only up to a constant".into())
    })?;
    let mut u = vec![0.5 * (lo + hi); grid.n_cells()];
    let mut report = PicardReport {
        iterations: 0,
        residual_norms: Vec::new(),
        updates: Vec::new(),
    };
    for _ in 0..config.max_iterations {
        let op = vg_operator(grid, vg, boundary, &u);
        if op.face_t.iter().all(|&t| t == 0.0) && op.dirichlet.iter().all(|d| d.transmissibility == 0.0) {
            return Err(Error::Singular("K(u) vanishes on every face".into()));
        }
        let a = op.matrix();
        let b = op.rhs();
        let au = a.mul_vec(&u);
        report
            .residual_norms
            .push(l2(&au.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>()));
        let target = op.solve_with(&op.factor()?, &a, &b)?;
        let mut step = 0.0f64;
        for (v, t) in u.iter_mut().zip(&target) {
            let d = config.damping * (t - *v);
            *v += d;
            step = step.max(d.abs());
        }
        report.iterations += 1;
        report.updates.push(step);
        if !step.is_finite() {
            return Err(Error::NonFinite("Picard update".into()));
        }
        if step <= config.tolerance {
            return Ok((Field::new(grid, u)?, report));
        }
    }
    Err(Error::NotConverged(format!(
        "Picard iteration did not reach {} within {} iterations",
        config.tolerance, config.max_iterations
    )))
}
