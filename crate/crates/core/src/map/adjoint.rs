//! Forward solves and discrete-adjoint sensitivities of the linear TPFA
//! system with respect to the cell-wise log-conductivity.

use std::cell::Cell;

use crate::error::Result;
use crate::grid::Field;
use crate::synth::banded::{BandedCholesky, BandedSpd};
use crate::synth::{BoundarySpec, Tpfa};

/// The factored system `A(k) u = b(k)` at one conductivity field, counting
/// the linear solves performed with it.
pub struct ForwardState {
    pub k: Vec<f64>,
    pub op: Tpfa,
    matrix: BandedSpd,
    chol: BandedCholesky,
    pub u: Vec<f64>,
    solves: Cell<usize>,
}

impl ForwardState {
    /// Assembles, factors and solves for `k = exp(ln_k)`. One solve.
    pub fn new(k: &Field, boundary: &BoundarySpec) -> Result<Self> {
        let op = Tpfa::harmonic(k, boundary)?;
        let matrix = op.matrix();
        let chol = op.factor()?;
        let u = op.solve_with(&chol, &matrix, &op.rhs())?;
        Ok(Self {
            k: k.values.clone(),
            op,
            matrix,
            chol,
            u,
            solves: Cell::new(1),
        })
    }

    /// Solves `A x = rhs` (the operator is symmetric, so this is also the
    /// adjoint solve).
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solves.set(self.solves.get() + 1);
        self.op.solve_with(&self.chol, &self.matrix, rhs)
    }

    pub fn solves(&self) -> usize {
        self.solves.get()
    }

    /// `lambda^T d(A u - b)/d ln k_c` for every cell `c`.
    pub fn contract(&self, lambda: &[f64]) -> Vec<f64> {
        let (k, u) = (&self.k, &self.u);
        let mut out = vec![0.0; k.len()];
        for (f, &t) in self.op.faces.iter().zip(&self.op.face_t) {
            // T = w 2 k_l k_h / (k_l + k_h), so dT/d ln k_l = T k_h / (k_l + k_h).
            let (kl, kh) = (k[f.lo], k[f.hi]);
            let jump = (u[f.lo] - u[f.hi]) * (lambda[f.lo] - lambda[f.hi]);
            let s = t / (kl + kh);
            out[f.lo] += s * kh * jump;
            out[f.hi] += s * kl * jump;
        }
        for d in &self.op.dirichlet {
            // T = k_c l / h, so dT/d ln k_c = T.
            out[d.cell] += d.transmissibility * (u[d.cell] - d.value) * lambda[d.cell];
        }
        out
    }

    /// Row of `d u_cell / d ln k`: one adjoint solve.
    pub fn sensitivity_row(&self, cell: usize) -> Result<Vec<f64>> {
        let mut e = vec![0.0; self.u.len()];
        e[cell] = 1.0;
        let mu = self.solve(&e)?;
        Ok(self.contract(&mu).into_iter().map(|v| -v).collect())
    }
}
