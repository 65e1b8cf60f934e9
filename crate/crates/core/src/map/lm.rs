//! Levenberg-Marquardt for nonlinear least squares `min |r(x)|^2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gauss-Newton model of the residual at one iterate.
pub trait LeastSquaresModel {
    /// `J^T r` at the linearization point.
    fn jtr(&self) -> &[f64];
    /// Solves `(J^T J + damping I) step = -J^T r`.
    fn step(&self, damping: f64) -> Result<Vec<f64>>;
}

pub trait LeastSquaresProblem {
    type Model: LeastSquaresModel;
    fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>>;
    /// Linearizes at `x`, where `residual` is `r(x)`.
    fn linearize(&mut self, x: &[f64], residual: &[f64]) -> Result<Self::Model>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub initial_damping: f64,
    /// Factor applied to the damping after a rejected step.
    pub damping_increase: f64,
    /// Divisor applied to the damping after an accepted step.
    pub damping_decrease: f64,
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by at most this
    /// fraction of its value.
    pub tolerance: f64,
    /// Give up when the damping grows beyond this without an acceptable step.
    pub max_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 10.0,
            max_iterations: 200,
            tolerance: 1e-12,
            max_damping: 1e16,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_damping > 0.0)
            || !(self.damping_increase > 1.0)
            || !(self.damping_decrease > 1.0)
            || !(self.tolerance >= 0.0)
            || self.max_iterations == 0
        {
            return Err(Error::InvalidConfig(
                "LM needs damping > 0, increase and decrease factors > 1, tolerance >= 0 and at least one iteration"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LmTermination {
    /// Relative decrease of an accepted step fell to the tolerance.
    Converged,
    /// The objective or its gradient vanished.
    Exact,
    MaxIterations,
    /// No damping up to the cap produced a decrease.
    Stagnated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    /// Objective at the start and after every accepted step.
    pub objectives: Vec<f64>,
    /// Damping used by every accepted step.
    pub dampings: Vec<f64>,
    pub rejections: usize,
    pub termination: LmTermination,
}

impl LmReport {
    pub fn stagnated(&self) -> bool {
        self.termination == LmTermination::Stagnated
    }

    /// CSV with columns `iteration,objective`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,objective\n");
        for (k, f) in self.objectives.iter().enumerate() {
            out.push_str(&format!("{k},{f:.17e}\n"));
        }
        out
    }
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Minimizes `|r(x)|^2` from `x0`: damping starts at `initial_damping`,
/// grows by `damping_increase` on every rejected step and shrinks by
/// `damping_decrease` on every accepted one. A trial whose residual cannot
/// be evaluated counts as rejected.
pub fn levenberg_marquardt<P: LeastSquaresProblem>(
    problem: &mut P,
    x0: &[f64],
    config: &LmConfig,
) -> Result<(Vec<f64>, LmReport)> {
    config.validate()?;
    let mut x = x0.to_vec();
    let mut r = problem.residual(&x)?;
    let mut f = sq_norm(&r);
    if !f.is_finite() {
        return Err(Error::NonFinite("least-squares objective at the initial point".into()));
    }
    let mut report = LmReport {
        objectives: vec![f],
        dampings: Vec::new(),
        rejections: 0,
        termination: LmTermination::MaxIterations,
    };
    let mut damping = config.initial_damping;
    'outer: for _ in 0..config.max_iterations {
        if f == 0.0 {
            report.termination = LmTermination::Exact;
            break;
        }
        let model = problem.linearize(&x, &r)?;
        if model.jtr().iter().all(|&g| g == 0.0) {
            report.termination = LmTermination::Exact;
            break;
        }
        loop {
            let trial = model.step(damping).and_then(|step| {
                let xt: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + b).collect();
                let rt = problem.residual(&xt)?;
                Ok((xt, rt))
            });
            if let Ok((xt, rt)) = trial {
                let ft = sq_norm(&rt);
                if ft < f {
                    let decrease = (f - ft) / f;
                    report.dampings.push(damping);
                    report.objectives.push(ft);
                    x = xt;
                    r = rt;
                    f = ft;
                    damping /= config.damping_decrease;
                    if decrease <= config.tolerance {
                        report.termination = LmTermination::Converged;
                        break 'outer;
                    }
                    continue 'outer;
                }
            }
            report.rejections += 1;
            damping *= config.damping_increase;
            if damping > config.max_damping {
                report.termination = LmTermination::Stagnated;
                break 'outer;
            }
        }
    }
    Ok((x, report))
}

/// Gauss-Newton model with an explicit dense Jacobian.
pub struct DenseModel {
    jtj: DMatrix<f64>,
    jtr: Vec<f64>,
}

impl DenseModel {
    pub fn new(jacobian: &DMatrix<f64>, residual: &[f64]) -> Result<Self> {
        if jacobian.nrows() != residual.len() {
            return Err(Error::DimensionMismatch {
                expected: jacobian.nrows(),
                got: residual.len(),
            });
        }
        let jtr = jacobian.tr_mul(&DVector::from_column_slice(residual));
        Ok(Self {
            jtj: jacobian.tr_mul(jacobian),
            jtr: jtr.as_slice().to_vec(),
        })
    }
}

impl LeastSquaresModel for DenseModel {
    fn jtr(&self) -> &[f64] {
        &self.jtr
    }

    fn step(&self, damping: f64) -> Result<Vec<f64>> {
        let n = self.jtr.len();
        let m = &self.jtj + DMatrix::identity(n, n) * damping;
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Factorization("damped normal matrix is not positive definite".into()))?;
        let s = chol.solve(&DVector::from_column_slice(&self.jtr));
        Ok(s.iter().map(|v| -v).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `r(x) = A x - b`.
    struct Linear {
        a: DMatrix<f64>,
        b: Vec<f64>,
    }

    impl LeastSquaresProblem for Linear {
        type Model = DenseModel;

        fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>> {
            let ax = &self.a * DVector::from_column_slice(x);
            Ok(ax.iter().zip(&self.b).map(|(p, q)| p - q).collect())
        }

        fn linearize(&mut self, _: &[f64], r: &[f64]) -> Result<DenseModel> {
            DenseModel::new(&self.a, r)
        }
    }

    fn problem() -> Linear {
        Linear {
            a: DMatrix::from_row_slice(5, 3, &[
                1.0, 2.0, 0.0, 0.5, -1.0, 3.0, 2.0, 0.0, 1.0, -1.0, 1.0, 1.0, 0.3, 0.7, -0.2,
            ]),
            b: vec![1.0, -2.0, 0.5, 3.0, 0.0],
        }
    }

    #[test]
    fn vanishing_damping_gives_the_normal_equations_solution_in_one_step() {
        let mut p = problem();
        let cfg = LmConfig {
            initial_damping: 1e-14,
            max_iterations: 1,
            ..Default::default()
        };
        let (x, report) = levenberg_marquardt(&mut p, &[0.0; 3], &cfg).unwrap();
        assert_eq!(report.objectives.len(), 2);
        let ata = p.a.tr_mul(&p.a);
        let atb = p.a.tr_mul(&DVector::from_column_slice(&p.b));
        let exact = ata.cholesky().unwrap().solve(&atb);
        for (a, b) in x.iter().zip(exact.iter()) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn huge_damping_gives_vanishing_steps() {
        let p = problem();
        let r = vec![1.0, -1.0, 2.0, 0.5, 0.0];
        let model = DenseModel::new(&p.a, &r).unwrap();
        let small = model.step(1e12).unwrap();
        assert!(small.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-10);
    }

    struct Rosenbrock;

    impl LeastSquaresProblem for Rosenbrock {
        type Model = DenseModel;

        fn residual(&mut self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])
        }

        fn linearize(&mut self, x: &[f64], r: &[f64]) -> Result<DenseModel> {
            let j = DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]);
            DenseModel::new(&j, r)
        }
    }

    #[test]
    fn accepted_objectives_strictly_decrease_on_a_nonlinear_problem() {
        let (x, report) = levenberg_marquardt(&mut Rosenbrock, &[-1.2, 1.0], &LmConfig::default()).unwrap();
        assert!(report.objectives.windows(2).all(|w| w[1] < w[0]));
        assert!((x[0] - 1.0).abs() < 1e-8 && (x[1] - 1.0).abs() < 1e-8, "{x:?}");
        assert!(!report.stagnated());
        assert!(report.to_csv().starts_with("iteration,objective\n0,"));
    }
}
