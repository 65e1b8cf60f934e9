use serde::{Deserialize, Serialize};

use super::ProblemKind;
use crate::autodiff::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::grid::{Grid2D, Point};
use crate::nn::batch::{JetBatch, JetOrder};
use crate::nn::{init_xavier, Jet2, MlpParams};

/// Per-coordinate map `z = scale * x + shift` from physical inputs to network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl AffineMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: vec![1.0; dim],
            shift: vec![0.0; dim],
        }
    }

    /// Maps the box `[lo, hi]` onto `[-1, 1]` in every coordinate.
    pub fn to_unit_box(lo: &[f64], hi: &[f64]) -> Self {
        let scale = lo.iter().zip(hi).map(|(a, b)| 2.0 / (b - a)).collect();
        let shift = lo.iter().zip(hi).map(|(a, b)| -(a + b) / (b - a)).collect();
        Self { scale, shift }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.scale)
            .zip(&self.shift)
            .map(|((x, a), b)| a * x + b)
            .collect()
    }

    /// Maps a row-major `P x dim` block of points.
    pub fn apply_rows(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        x.chunks_exact(d).flat_map(|row| self.apply(row)).collect()
    }
}

/// A network with its input map and an optional softplus output transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub net: MlpParams,
    pub input: AffineMap,
    /// Pass the output through softplus so that it stays positive.
    pub positive: bool,
}

impl Surrogate {
    pub fn new(net: MlpParams, input: AffineMap, positive: bool) -> Result<Self> {
        if input.dim() != net.input_dim() || input.shift.len() != input.dim() {
            return Err(Error::DimensionMismatch {
                expected: net.input_dim(),
                got: input.dim(),
            });
        }
        Ok(Self { net, input, positive })
    }

    pub fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let n = self.net.forward(&self.input.apply(x))?;
        Ok(if self.positive { softplus(n) } else { n })
    }

    /// Value, gradient and Hessian with respect to the physical inputs.
    pub fn jet(&self, x: &[f64]) -> Result<Jet2> {
        self.check_dim(x)?;
        let raw = self.net.eval_jet(&self.input.apply(x))?;
        let d = self.dim();
        let a = &self.input.scale;
        let mut grad: Vec<f64> = (0..d).map(|i| a[i] * raw.grad[i]).collect();
        let mut hess: Vec<f64> = (0..d * d).map(|k| a[k / d] * a[k % d] * raw.hess[k]).collect();
        let mut value = raw.value;
        if self.positive {
            let s = sigmoid(value);
            let s1 = s * (1.0 - s);
            value = softplus(value);
            for i in 0..d {
                for j in 0..d {
                    hess[i * d + j] = s * hess[i * d + j] + s1 * grad[i] * grad[j];
                }
            }
            grad.iter_mut().for_each(|g| *g *= s);
        }
        let jet = Jet2 { value, grad, hess };
        if !(jet.value.is_finite() && jet.grad.iter().chain(&jet.hess).all(|v| v.is_finite())) {
            return Err(Error::NonFinite("surrogate jet".into()));
        }
        Ok(jet)
    }

    /// Values at many inputs (row-major `P x dim`).
    pub fn predict(&self, inputs: &[f64]) -> Vec<f64> {
        if inputs.is_empty() {
            return Vec::new();
        }
        let z = self.input.apply_rows(inputs);
        let batch = JetBatch::forward(&self.net, &z, JetOrder::Value);
        let out = batch.output();
        if self.positive {
            out.iter().map(|&v| softplus(v)).collect()
        } else {
            out.to_vec()
        }
    }
}

/// The state surrogate `u` and the coefficient surrogate `K` of one problem.
/// For the linear kind `K` takes `x`; for the nonlinear kind it takes `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnModel {
    pub kind: ProblemKind,
    pub u: Surrogate,
    pub k: Surrogate,
}

impl PinnModel {
    /// Xavier-initialized networks with the given hidden widths. The state
    /// network uses seed `2 s`, the coefficient network `2 s + 1`.
    pub fn new(kind: ProblemKind, grid: &Grid2D, hidden: &[usize], seed: u64, positive_k: bool) -> Result<Self> {
        let sizes = |input: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(1);
            s
        };
        let u_net = init_xavier(&sizes(2), seed.wrapping_mul(2))?;
        let k_in = match kind {
            ProblemKind::Linear => 2,
            ProblemKind::Nonlinear => 1,
        };
        let k_net = init_xavier(&sizes(k_in), seed.wrapping_mul(2).wrapping_add(1))?;
        Self::from_nets(kind, grid, u_net, k_net, positive_k)
    }

    /// Wraps existing networks with the standard input maps: spatial inputs
    /// are mapped from the domain onto `[-1, 1]^2`; the `K(u)` network takes
    /// the (already dimensionless) state directly.
    pub fn from_nets(
        kind: ProblemKind,
        grid: &Grid2D,
        u_net: MlpParams,
        k_net: MlpParams,
        positive_k: bool,
    ) -> Result<Self> {
        let spatial = AffineMap::to_unit_box(&[0.0, 0.0], &[grid.lx, grid.ly]);
        let k_map = match kind {
            ProblemKind::Linear => spatial.clone(),
            ProblemKind::Nonlinear => AffineMap::identity(1),
        };
        Ok(Self {
            kind,
            u: Surrogate::new(u_net, spatial, false)?,
            k: Surrogate::new(k_net, k_map, positive_k)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.u.net.num_params() + self.k.net.num_params()
    }

    /// State parameters followed by coefficient parameters.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.u.net.to_flat();
        v.extend(self.k.net.to_flat());
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let nu = self.u.net.num_params();
        self.u.net.set_flat(&flat[..nu]);
        self.k.net.set_flat(&flat[nu..]);
    }

    pub fn predict_u(&self, points: &[Point]) -> Vec<f64> {
        self.u.predict(points.as_flattened())
    }

    /// `K` at spatial points (linear kind).
    pub fn predict_k_at(&self, points: &[Point]) -> Vec<f64> {
        self.k.predict(points.as_flattened())
    }

    /// `K` at state values (nonlinear kind).
    pub fn predict_k_of(&self, states: &[f64]) -> Vec<f64> {
        self.k.predict(states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_box_map_hits_the_corners() {
        let m = AffineMap::to_unit_box(&[0.0, 2.0], &[4.0, 3.0]);
        assert_eq!(m.apply(&[0.0, 2.0]), vec![-1.0, -1.0]);
        assert_eq!(m.apply(&[4.0, 3.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn physical_jet_matches_finite_differences() {
        let net = init_xavier(&[2, 6, 6, 1], 4).unwrap();
        for positive in [false, true] {
            let s = Surrogate::new(net.clone(), AffineMap::to_unit_box(&[0.0, 0.0], &[3.0, 2.0]), positive).unwrap();
            let x = [1.1, 0.7];
            let j = s.jet(&x).unwrap();
            assert!((j.value - s.value(&x).unwrap()).abs() < 1e-15);
            let h = 1e-5;
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (s.value(&xp).unwrap() - s.value(&xm).unwrap()) / (2.0 * h);
                assert!((fd - j.grad[i]).abs() <= 1e-8 * fd.abs().max(1.0));
                let jp = s.jet(&xp).unwrap();
                let jm = s.jet(&xm).unwrap();
                for k in 0..2 {
                    let fd2 = (jp.grad[k] - jm.grad[k]) / (2.0 * h);
                    assert!((fd2 - j.hess[i * 2 + k]).abs() <= 1e-6 * fd2.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn batch_prediction_matches_pointwise_values() {
        let g = Grid2D::unit_square(4);
        let m = PinnModel::new(ProblemKind::Linear, &g, &[5, 5], 3, true).unwrap();
        let pts = g.centroids();
        let pu = m.predict_u(&pts);
        let pk = m.predict_k_at(&pts);
        for (i, p) in pts.iter().enumerate() {
            assert!((pu[i] - m.u.value(p).unwrap()).abs() <= 1e-14);
            assert!((pk[i] - m.k.value(p).unwrap()).abs() <= 1e-14);
            assert!(pk[i] > 0.0);
        }
    }

    #[test]
    fn flat_round_trip_through_the_model() {
        let g = Grid2D::unit_square(4);
        let mut m = PinnModel::new(ProblemKind::Nonlinear, &g, &[4], 9, false).unwrap();
        let flat = m.to_flat();
        assert_eq!(flat.len(), m.num_params());
        let shifted: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
        m.set_flat(&shifted);
        assert_eq!(m.to_flat(), shifted);
        assert_eq!(m.k.dim(), 1);
    }
}
