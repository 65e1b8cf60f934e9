//! Pointwise PDE residuals and boundary fluxes of the surrogates.

use crate::error::{Error, Result};
use crate::grid::{Axis, Edge, Grid2D, Point};

use super::Surrogate;

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// `div(K grad u) = grad K . grad u + K lap u` for a coefficient that depends on `x`.
pub fn linear_residual(u: &Surrogate, k: &Surrogate, x: Point) -> Result<f64> {
    let ju = u.jet(&x)?;
    let jk = k.jet(&x)?;
    let adv = jk.grad[0] * ju.grad[0] + jk.grad[1] * ju.grad[1];
    finite(adv + jk.value * ju.laplacian(), "linear residual")
}

/// Normal derivative `du/dx1` on a lateral boundary `x1 = 0` or `x1 = lx`.
pub fn linear_neumann_flux(u: &Surrogate, x: Point, grid: &Grid2D) -> Result<f64> {
    if !(grid.on_edge(x, Edge::West) || grid.on_edge(x, Edge::East)) {
        return Err(Error::OffBoundary {
            x: x[0],
            y: x[1],
            boundary: "x1 = 0 or x1 = L1".into(),
        });
    }
    finite(u.jet(&x)?.grad[0], "Neumann flux")
}

/// `div(K(u) grad u) = K'(u) |grad u|^2 + K(u) lap u` with `K` evaluated at the
/// surrogate state.
pub fn nonlinear_residual(u: &Surrogate, k: &Surrogate, x: Point) -> Result<f64> {
    let ju = u.jet(&x)?;
    let jk = k.jet(&[ju.value])?;
    let g2 = ju.grad[0] * ju.grad[0] + ju.grad[1] * ju.grad[1];
    finite(jk.grad[0] * g2 + jk.value * ju.laplacian(), "nonlinear residual")
}

/// Flux component `-K(u) du/dx_dir` on a boundary normal to `direction`.
pub fn nonlinear_neumann_flux(
    u: &Surrogate,
    k: &Surrogate,
    x: Point,
    direction: Axis,
    grid: &Grid2D,
) -> Result<f64> {
    let (a, b, name) = match direction {
        Axis::X => (Edge::West, Edge::East, "x1 = 0 or x1 = L1"),
        Axis::Y => (Edge::South, Edge::North, "x2 = 0 or x2 = L2"),
    };
    if !(grid.on_edge(x, a) || grid.on_edge(x, b)) {
        return Err(Error::OffBoundary {
            x: x[0],
            y: x[1],
            boundary: name.into(),
        });
    }
    let ju = u.jet(&x)?;
    let kv = k.value(&[ju.value])?;
    let i = match direction {
        Axis::X => 0,
        Axis::Y => 1,
    };
    finite(-kv * ju.grad[i], "nonlinear Neumann flux")
}

/// Coordinate index of the flux component checked on `edge`.
pub(crate) fn edge_direction(edge: Edge) -> usize {
    match edge {
        Edge::West | Edge::East => 0,
        Edge::South | Edge::North => 1,
    }
}
