//! Relative squared-error metrics: `int (ref - est)^2 / int ref^2`, without a square root.

use crate::error::{Error, Result};
use crate::grid::Field;

/// Relative errors of one trained model against the reference data.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub eps_u: f64,
    pub eps_k: f64,
    /// `|u_hat - u|` per cell.
    pub u_abs_error: Field,
    /// `|K_hat - K|` per cell.
    pub k_abs_error: Field,
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    if !(num.is_finite() && den.is_finite()) {
        return Err(Error::NonFinite("relative error".into()));
    }
    Ok(num / den)
}

/// Relative error of a cell field, with both integrals taken as
/// cell-area-weighted sums.
pub fn relative_error(estimate: &Field, reference: &Field) -> Result<f64> {
    if estimate.grid != reference.grid {
        return Err(Error::InvalidConfig(format!(
            "estimate grid {:?} differs from reference grid {:?}",
            estimate.grid, reference.grid
        )));
    }
    let area = reference.grid.cell_area();
    let (mut num, mut den) = (0.0, 0.0);
    for (e, r) in estimate.values.iter().zip(&reference.values) {
        num += area * (r - e) * (r - e);
        den += area * r * r;
    }
    ratio(num, den)
}

/// Relative error of a scalar function on `[lo, hi]`, with both integrals
/// approximated by the midpoint rule on `n` equal intervals.
pub fn relative_error_1d(
    estimate: impl Fn(f64) -> f64,
    reference: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<f64> {
    if n == 0 || !(hi > lo) {
        return Err(Error::InvalidConfig(format!(
            "need n > 0 and lo < hi, got n={n} on [{lo}, {hi}]"
        )));
    }
    let h = (hi - lo) / n as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let u = lo + (i as f64 + 0.5) * h;
        let (e, r) = (estimate(u), reference(u));
        num += h * (r - e) * (r - e);
        den += h * r * r;
    }
    ratio(num, den)
}
