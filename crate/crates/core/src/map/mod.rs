//! MAP estimate of the cell-wise log-conductivity of the linear problem:
//!
//! `min |u* - H_u u(k)|^2 + |ln k* - H_K ln k|^2 + gamma |L ln k|^2`
//!
//! over `ln k`, with `u(k)` the TPFA solution, solved by Levenberg-Marquardt
//! with adjoint sensitivities.

mod adjoint;
pub mod lm;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use adjoint::ForwardState;
pub use lm::{
    levenberg_marquardt, DenseModel, LeastSquaresModel, LeastSquaresProblem, LmConfig, LmReport, LmTermination,
};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid2D};
use crate::problem::Observations;
use crate::synth::banded::BandedSpd;
use crate::synth::BoundarySpec;

/// Discrete gradient: one row `(x[hi] - x[lo]) / spacing` per interior face,
/// x-normal faces first, then y-normal faces.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientOperator {
    /// `(lo, hi, 1 / spacing)` of every row.
    pub rows: Vec<(usize, usize, f64)>,
    pub cols: usize,
}

/// The operator `L` of the regularizer on `grid`, with `2 nx ny - nx - ny` rows.
pub fn discrete_gradient_operator(grid: &Grid2D) -> GradientOperator {
    GradientOperator {
        rows: grid.faces().iter().map(|f| (f.lo, f.hi, 1.0 / f.spacing)).collect(),
        cols: grid.n_cells(),
    }
}

impl GradientOperator {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|&(lo, hi, s)| (x[hi] - x[lo]) * s).collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (&(lo, hi, s), &v) in self.rows.iter().zip(y) {
            out[hi] += s * v;
            out[lo] -= s * v;
        }
        out
    }

    /// Adds `weight L^T L` into a banded matrix.
    pub fn add_normal(&self, weight: f64, into: &mut BandedSpd) {
        for &(lo, hi, s) in &self.rows {
            let w = weight * s * s;
            into.add(lo, lo, w);
            into.add(hi, hi, w);
            into.add(hi, lo, -w);
        }
    }
}

/// 0/1 row selectors of the observed cells. Rows are kept in canonical order
/// (by cell, then value) so that the estimate does not depend on the order in
/// which observations are supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationOperators {
    /// Number of cells `M`.
    pub m: usize,
    pub u_cells: Vec<usize>,
    pub k_cells: Vec<usize>,
}

impl ObservationOperators {
    /// Dense `N x M` matrix of one selector.
    pub fn dense(&self, cells: &[usize]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(cells.len(), self.m);
        for (r, &c) in cells.iter().enumerate() {
            h[(r, c)] = 1.0;
        }
        h
    }

    pub fn h_u(&self) -> DMatrix<f64> {
        self.dense(&self.u_cells)
    }

    pub fn h_k(&self) -> DMatrix<f64> {
        self.dense(&self.k_cells)
    }
}

/// Measurements mapped onto cells: `u*` and `ln k*` in canonical row order.
#[derive(Debug, Clone, PartialEq)]
pub struct MapData {
    pub ops: ObservationOperators,
    pub u_obs: Vec<f64>,
    pub lnk_obs: Vec<f64>,
}

fn to_cells(grid: &Grid2D, obs: &Observations, what: &str) -> Result<Vec<(usize, f64)>> {
    let tol = 1e-9 * grid.lx.max(grid.ly);
    let mut rows = Vec::with_capacity(obs.len());
    for (p, &v) in obs.points.iter().zip(&obs.values) {
        let cell = grid
            .locate(*p)
            .filter(|&c| {
                let q = grid.centroid(c);
                (q[0] - p[0]).abs() <= tol && (q[1] - p[1]).abs() <= tol
            })
            .ok_or_else(|| {
                Error::InvalidConfig(format!("{what} observation at ({}, {}) is not at a cell centroid", p[0], p[1]))
            })?;
        rows.push((cell, v));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(rows)
}

impl MapData {
    /// `k_obs` holds conductivities (not logarithms); they must be positive.
    pub fn new(grid: &Grid2D, u_obs: &Observations, k_obs: &Observations) -> Result<Self> {
        let u = to_cells(grid, u_obs, "state")?;
        let k = to_cells(grid, k_obs, "conductivity")?;
        if let Some((c, v)) = k.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "conductivity observation in cell {c} must be positive, got {v}"
            )));
        }
        Ok(Self {
            ops: ObservationOperators {
                m: grid.n_cells(),
                u_cells: u.iter().map(|r| r.0).collect(),
                k_cells: k.iter().map(|r| r.0).collect(),
            },
            u_obs: u.iter().map(|r| r.1).collect(),
            lnk_obs: k.iter().map(|r| r.1.ln()).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    /// Weight of the gradient penalty.
    pub gamma_reg: f64,
    #[serde(flatten)]
    pub lm: LmConfig,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            gamma_reg: 1e-6,
            lm: LmConfig::default(),
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_reg >= 0.0 && self.gamma_reg.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma_reg must be >= 0, got {}", self.gamma_reg)));
        }
        self.lm.validate()
    }
}

/// The MAP least-squares problem over `ln k`.
pub struct MapProblem<'a> {
    pub grid: Grid2D,
    pub boundary: &'a BoundarySpec,
    pub data: &'a MapData,
    pub gamma: f64,
    pub l: GradientOperator,
    cache: Option<(Vec<f64>, ForwardState)>,
}

impl<'a> MapProblem<'a> {
    pub fn new(grid: Grid2D, boundary: &'a BoundarySpec, data: &'a MapData, gamma: f64) -> Self {
        Self {
            grid,
            boundary,
            data,
            gamma,
            l: discrete_gradient_operator(&grid),
            cache: None,
        }
    }

    fn forward(&mut self, ln_k: &[f64]) -> Result<&ForwardState> {
        let hit = matches!(&self.cache, Some((x, _)) if x.as_slice() == ln_k);
        if !hit {
            let k = Field::new(self.grid, ln_k.iter().map(|v| v.exp()).collect())?;
            let state = ForwardState::new(&k, self.boundary)?;
            self.cache = Some((ln_k.to_vec(), state));
        }
        Ok(&self.cache.as_ref().expect("cache filled above").1)
    }

    /// Residual blocks `[H_u u - u*; H_K ln k - ln k*; sqrt(gamma) L ln k]`.
    fn residual_blocks(&self, ln_k: &[f64], u: &[f64]) -> Vec<f64> {
        let d = self.data;
        let mut r = Vec::with_capacity(d.u_obs.len() + d.lnk_obs.len() + self.l.n_rows());
        r.extend(d.ops.u_cells.iter().zip(&d.u_obs).map(|(&c, v)| u[c] - v));
        r.extend(d.ops.k_cells.iter().zip(&d.lnk_obs).map(|(&c, v)| ln_k[c] - v));
        let sg = self.gamma.sqrt();
        r.extend(self.l.apply(ln_k).into_iter().map(|v| sg * v));
        r
    }
}

impl LeastSquaresProblem for MapProblem<'_> {
    type Model = MapModel;

    fn residual(&mut self, ln_k: &[f64]) -> Result<Vec<f64>> {
        let u = self.forward(ln_k)?.u.clone();
        Ok(self.residual_blocks(ln_k, &u))
    }

    fn linearize(&mut self, ln_k: &[f64], r: &[f64]) -> Result<MapModel> {
        let n_u = self.data.u_obs.len();
        let n_k = self.data.lnk_obs.len();
        let m = self.grid.n_cells();
        let cells = self.data.ops.u_cells.clone();
        let k_cells = self.data.ops.k_cells.clone();
        let state = self.forward(ln_k)?;
        let ju = cells
            .iter()
            .map(|&c| state.sensitivity_row(c))
            .collect::<Result<Vec<_>>>()?;

        // J^T r, block by block.
        let mut jtr = vec![0.0; m];
        for (row, &ri) in ju.iter().zip(&r[..n_u]) {
            jtr.iter_mut().zip(row).for_each(|(g, j)| *g += j * ri);
        }
        for (&c, &ri) in k_cells.iter().zip(&r[n_u..n_u + n_k]) {
            jtr[c] += ri;
        }
        let sg = self.gamma.sqrt();
        let lt = self.l.apply_transpose(&r[n_u + n_k..]);
        jtr.iter_mut().zip(lt).for_each(|(g, v)| *g += sg * v);

        // Banded part H_K^T H_K + gamma L^T L; the state block is low rank.
        let mut base = BandedSpd::zeros(m, self.grid.nx.min(m.saturating_sub(1)));
        for &c in &k_cells {
            base.add(c, c, 1.0);
        }
        self.l.add_normal(self.gamma, &mut base);
        Ok(MapModel { jtr, base, ju })
    }
}

/// Gauss-Newton model `J^T J = B + J_u^T J_u` with banded `B` and the
/// `N_u x M` state block `J_u`. Damped steps use the Woodbury identity, so
/// each costs one banded factorization, `N_u + 1` banded solves and one
/// `N_u x N_u` dense factorization.
pub struct MapModel {
    jtr: Vec<f64>,
    base: BandedSpd,
    ju: Vec<Vec<f64>>,
}

impl MapModel {
    /// `J^T J` as a dense matrix (for tests and small problems).
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        let m = self.jtr.len();
        let mut out = DMatrix::from_fn(m, m, |i, j| self.base.get(i, j));
        for row in &self.ju {
            for i in 0..m {
                for j in 0..m {
                    out[(i, j)] += row[i] * row[j];
                }
            }
        }
        out
    }
}

impl LeastSquaresModel for MapModel {
    fn jtr(&self) -> &[f64] {
        &self.jtr
    }

    fn step(&self, damping: f64) -> Result<Vec<f64>> {
        let mut b = self.base.clone();
        for i in 0..b.dim() {
            b.add(i, i, damping);
        }
        let chol = b.cholesky()?;
        let z = chol.solve(&self.jtr);
        let mut x = z.clone();
        if !self.ju.is_empty() {
            let y: Vec<Vec<f64>> = self.ju.iter().map(|row| chol.solve(row)).collect();
            let n = self.ju.len();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            let cap = DMatrix::from_fn(n, n, |i, j| dot(&self.ju[i], &y[j]) + if i == j { 1.0 } else { 0.0 });
            let rhs = DVector::from_fn(n, |i, _| dot(&self.ju[i], &z));
            let t = cap
                .cholesky()
                .ok_or_else(|| Error::Factorization("capacitance matrix is not positive definite".into()))?
                .solve(&rhs);
            for (yi, ti) in y.iter().zip(t.iter()) {
                x.iter_mut().zip(yi).for_each(|(v, w)| *v -= ti * w);
            }
        }
        Ok(x.into_iter().map(|v| -v).collect())
    }
}

/// Objective value and its gradient over `ln k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointGradient {
    pub objective: f64,
    pub gradient: Vec<f64>,
    /// Linear solves performed (one forward, one adjoint).
    pub solves: usize,
}

/// Gradient of the MAP objective at `k` by one forward and one adjoint solve.
pub fn adjoint_gradient(
    k: &Field,
    boundary: &BoundarySpec,
    data: &MapData,
    gamma: f64,
) -> Result<AdjointGradient> {
    let grid = k.grid;
    let state = ForwardState::new(k, boundary)?;
    let ln_k: Vec<f64> = k.values.iter().map(|v| v.ln()).collect();
    let l = discrete_gradient_operator(&grid);

    let mut w = vec![0.0; grid.n_cells()];
    let mut objective = 0.0;
    for (&c, &v) in data.ops.u_cells.iter().zip(&data.u_obs) {
        let r = state.u[c] - v;
        objective += r * r;
        w[c] += 2.0 * r;
    }
    let lambda = state.solve(&w)?;
    let mut gradient: Vec<f64> = state.contract(&lambda).into_iter().map(|v| -v).collect();

    for (&c, &v) in data.ops.k_cells.iter().zip(&data.lnk_obs) {
        let r = ln_k[c] - v;
        objective += r * r;
        gradient[c] += 2.0 * r;
    }
    let lk = l.apply(&ln_k);
    objective += gamma * lk.iter().map(|v| v * v).sum::<f64>();
    let reg = l.apply_transpose(&lk);
    gradient.iter_mut().zip(reg).for_each(|(g, v)| *g += 2.0 * gamma * v);

    Ok(AdjointGradient {
        objective,
        gradient,
        solves: state.solves(),
    })
}

/// Result of [`map_estimate`].
#[derive(Debug, Clone, PartialEq)]
pub struct MapEstimate {
    pub k: Field,
    pub report: LmReport,
}

/// MAP estimate of `k` from state and conductivity observations at cell
/// centroids. The iteration starts from the uniform field at the mean of the
/// observed `ln k*` (zero without conductivity data).
pub fn map_estimate(
    grid: Grid2D,
    u_obs: &Observations,
    k_obs: &Observations,
    boundary: &BoundarySpec,
    config: &MapConfig,
) -> Result<MapEstimate> {
    config.validate()?;
    grid.validate()?;
    let data = MapData::new(&grid, u_obs, k_obs)?;
    let start = if data.lnk_obs.is_empty() {
        0.0
    } else {
        data.lnk_obs.iter().sum::<f64>() / data.lnk_obs.len() as f64
    };
    let mut problem = MapProblem::new(grid, boundary, &data, config.gamma_reg);
    let (ln_k, report) = levenberg_marquardt(&mut problem, &vec![start; grid.n_cells()], &config.lm)?;
    Ok(MapEstimate {
        k: Field::new(grid, ln_k.into_iter().map(f64::exp).collect())?,
        report,
    })
}
