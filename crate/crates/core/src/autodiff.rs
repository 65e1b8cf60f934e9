//! Reverse-mode differentiation of scalar functionals of network jets.
//!
//! A [`Tape`] records scalar operations as a Wengert list. Network
//! evaluations enter the tape as batch nodes: one call propagates value,
//! gradient and Hessian jets for many points and exposes every jet component
//! as a tape variable. The reverse sweep pulls adjoints of those components
//! back through the jet propagation, which yields exact parameter gradients
//! of expressions that involve spatial derivatives of the networks.

use crate::error::{Error, Result};
use crate::nn::batch::{JetBatch, JetOrder};
use crate::nn::{MlpParams, ParamGradient};

/// Handle to a scalar on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    a: u32,
    b: u32,
    da: f64,
    db: f64,
}

impl Node {
    const LEAF: Node = Node {
        a: NO_PARENT,
        b: NO_PARENT,
        da: 0.0,
        db: 0.0,
    };
}

struct BatchRecord {
    net: usize,
    jets: JetBatch,
    start: usize,
    end: usize,
    inputs: Option<Vec<Var>>,
}

/// Jet components of one network over a batch of points.
#[derive(Debug, Clone, Copy)]
pub struct NetJets {
    start: u32,
    npts: usize,
    dim: usize,
    order: JetOrder,
}

impl NetJets {
    pub fn len(&self) -> usize {
        self.npts
    }

    pub fn is_empty(&self) -> bool {
        self.npts == 0
    }

    fn at(&self, channel: usize, p: usize) -> Var {
        debug_assert!(p < self.npts);
        Var(self.start + (channel * self.npts + p) as u32)
    }

    pub fn value(&self, p: usize) -> Var {
        self.at(0, p)
    }

    pub fn grad(&self, p: usize, i: usize) -> Var {
        assert!(self.order >= JetOrder::Gradient && i < self.dim);
        self.at(1 + i, p)
    }

    pub fn hess(&self, p: usize, i: usize, j: usize) -> Var {
        assert!(self.order == JetOrder::Hessian && i < self.dim && j < self.dim);
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.at(1 + self.dim + packed_index(self.dim, i, j), p)
    }
}

/// Position of `(i, j)`, `i <= j`, in the packed upper triangle
/// `(0,0), (0,1), .., (0,d-1), (1,1), ..`.
pub(crate) fn packed_index(d: usize, i: usize, j: usize) -> usize {
    i * d - i * i.saturating_sub(1) / 2 + (j - i)
}

/// Recording of scalar operations over one or more networks.
pub struct Tape<'n> {
    nets: Vec<&'n MlpParams>,
    nodes: Vec<Node>,
    values: Vec<f64>,
    batches: Vec<BatchRecord>,
}

impl<'n> Tape<'n> {
    pub fn new(nets: &[&'n MlpParams]) -> Self {
        Self {
            nets: nets.to_vec(),
            nodes: Vec::new(),
            values: Vec::new(),
            batches: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: f64, node: Node) -> Var {
        let id = self.nodes.len();
        assert!(id < NO_PARENT as usize, "tape overflow");
        self.nodes.push(node);
        self.values.push(value);
        Var(id as u32)
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.idx()]
    }

    pub fn constant(&mut self, c: f64) -> Var {
        self.push(c, Node::LEAF)
    }

    fn unary(&mut self, value: f64, a: Var, da: f64) -> Var {
        self.push(
            value,
            Node {
                a: a.0,
                b: NO_PARENT,
                da,
                db: 0.0,
            },
        )
    }

    fn binary(&mut self, value: f64, a: Var, da: f64, b: Var, db: f64) -> Var {
        self.push(value, Node { a: a.0, b: b.0, da, db })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.binary(v, a, 1.0, b, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.binary(v, a, 1.0, b, -1.0)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.binary(va * vb, a, vb, b, va)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.unary(v, a, -1.0)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = c * self.value(a);
        self.unary(v, a, c)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.unary(v, a, 1.0)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let va = self.value(a);
        self.unary(va * va, a, 2.0 * va)
    }

    /// `ln(1 + e^a)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let x = self.value(a);
        self.unary(softplus(x), a, sigmoid(x))
    }

    /// Logistic sigmoid, the derivative of [`Tape::softplus`].
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = sigmoid(x);
        self.unary(s, a, s * (1.0 - s))
    }

    /// Sum in index order; an empty slice yields the constant zero.
    pub fn sum(&mut self, vars: &[Var]) -> Var {
        let Some((&first, rest)) = vars.split_first() else {
            return self.constant(0.0);
        };
        rest.iter().fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn mean(&mut self, vars: &[Var]) -> Var {
        let s = self.sum(vars);
        self.scale(s, 1.0 / vars.len().max(1) as f64)
    }

    /// Evaluates network `net` at fixed points (row-major `P x dim`).
    pub fn jets(&mut self, net: usize, points: &[f64], order: JetOrder) -> NetJets {
        let jets = JetBatch::forward(self.nets[net], points, order);
        self.record_batch(net, jets, None)
    }

    /// Evaluates network `net` at points given by tape variables
    /// (row-major `P x dim`), so adjoints also flow into the inputs.
    pub fn jets_at(&mut self, net: usize, inputs: &[Var], order: JetOrder) -> NetJets {
        let points: Vec<f64> = inputs.iter().map(|&v| self.value(v)).collect();
        let jets = JetBatch::forward(self.nets[net], &points, order);
        self.record_batch(net, jets, Some(inputs.to_vec()))
    }

    fn record_batch(&mut self, net: usize, jets: JetBatch, inputs: Option<Vec<Var>>) -> NetJets {
        let start = self.nodes.len();
        for &v in jets.output() {
            self.push(v, Node::LEAF);
        }
        let end = self.nodes.len();
        let handle = NetJets {
            start: start as u32,
            npts: jets.npts,
            dim: jets.dim,
            order: jets.order,
        };
        self.batches.push(BatchRecord {
            net,
            jets,
            start,
            end,
            inputs,
        });
        handle
    }

    /// Gradient of `output` with respect to the parameters of every network,
    /// one entry per network in registration order.
    pub fn gradient(&self, output: Var) -> Vec<ParamGradient> {
        let mut grads: Vec<ParamGradient> = self
            .nets
            .iter()
            .map(|n| ParamGradient::zeros(n.num_params()))
            .collect();
        let mut adj = vec![0.0; self.nodes.len()];
        adj[output.idx()] = 1.0;

        let mut b = self.batches.len();
        let mut i = self.nodes.len();
        while i > 0 {
            if b > 0 && self.batches[b - 1].end == i {
                let rec = &self.batches[b - 1];
                let out_adj = &adj[rec.start..rec.end];
                if out_adj.iter().any(|&g| g != 0.0) {
                    let net = self.nets[rec.net];
                    match &rec.inputs {
                        None => rec.jets.backward(net, out_adj, &mut grads[rec.net].0, None),
                        Some(inputs) => {
                            let mut xbar = vec![0.0; inputs.len()];
                            rec.jets
                                .backward(net, out_adj, &mut grads[rec.net].0, Some(&mut xbar));
                            for (v, g) in inputs.iter().zip(xbar) {
                                adj[v.idx()] += g;
                            }
                        }
                    }
                }
                i = rec.start;
                b -= 1;
                continue;
            }
            i -= 1;
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            if node.a != NO_PARENT {
                adj[node.a as usize] += g * node.da;
            }
            if node.b != NO_PARENT {
                adj[node.b as usize] += g * node.db;
            }
        }
        grads
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Value and exact parameter gradients of a scalar built by `loss` over the
/// given networks.
pub fn loss_param_gradient<'n, F>(nets: &[&'n MlpParams], loss: F) -> Result<(f64, Vec<ParamGradient>)>
where
    F: FnOnce(&mut Tape<'n>) -> Result<Var>,
{
    let mut tape = Tape::new(nets);
    let out = loss(&mut tape)?;
    let value = tape.value(out);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    let grads = tape.gradient(out);
    if grads.iter().any(|g| g.0.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("loss gradient".into()));
    }
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{init_xavier, MlpParams};

    fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f64> {
        (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Residual-style loss `sum (K_x u_x + K_y u_y + K lap u)^2` over the points.
    fn residual_loss<'n>(tape: &mut Tape<'n>, pts: &[f64]) -> Var {
        let u = tape.jets(0, pts, JetOrder::Hessian);
        let k = tape.jets(1, pts, JetOrder::Gradient);
        let mut terms = Vec::new();
        for p in 0..u.len() {
            let a = tape.mul(k.grad(p, 0), u.grad(p, 0));
            let b = tape.mul(k.grad(p, 1), u.grad(p, 1));
            let lap = tape.add(u.hess(p, 0, 0), u.hess(p, 1, 1));
            let c = tape.mul(k.value(p), lap);
            let ab = tape.add(a, b);
            let r = tape.add(ab, c);
            terms.push(tape.square(r));
        }
        tape.sum(&terms)
    }

    fn plain_residual_loss(u: &MlpParams, k: &MlpParams, pts: &[f64]) -> f64 {
        pts.chunks(2)
            .map(|x| {
                let ju = u.eval_jet(x).unwrap();
                let jk = k.eval_jet(x).unwrap();
                let r = jk.grad[0] * ju.grad[0] + jk.grad[1] * ju.grad[1] + jk.value * ju.laplacian();
                r * r
            })
            .sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs())
    }

    #[test]
    fn batch_jets_agree_with_pointwise_jets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = init_xavier(&[2, 8, 8, 1], 3).unwrap();
        let pts = random_points(&mut rng, 7, 2);
        let mut tape = Tape::new(&[&net]);
        let jets = tape.jets(0, &pts, JetOrder::Hessian);
        for (p, x) in pts.chunks(2).enumerate() {
            let jet = net.eval_jet(x).unwrap();
            assert!((tape.value(jets.value(p)) - jet.value).abs() < 1e-14);
            for i in 0..2 {
                assert!((tape.value(jets.grad(p, i)) - jet.grad[i]).abs() < 1e-14);
                for j in 0..2 {
                    assert!((tape.value(jets.hess(p, i, j)) - jet.hess_at(i, j)).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn packed_index_follows_pair_order() {
        for d in 1..5 {
            for (k, (i, j)) in crate::nn::hess_pairs(d).into_iter().enumerate() {
                assert_eq!(packed_index(d, i, j), k);
            }
        }
    }

    #[test]
    fn residual_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = init_xavier(&[2, 8, 8, 1], 1).unwrap();
        let k = init_xavier(&[2, 8, 8, 1], 2).unwrap();
        let pts = random_points(&mut rng, 10, 2);
        let (value, grads) = loss_param_gradient(&[&u, &k], |t| Ok(residual_loss(t, &pts))).unwrap();
        assert!(rel_err(value, plain_residual_loss(&u, &k, &pts)) < 1e-12);

        let h = 1e-5;
        for (which, g) in grads.iter().enumerate() {
            let base = if which == 0 { &u } else { &k };
            let flat = base.to_flat();
            for idx in 0..flat.len() {
                let mut plus = flat.clone();
                plus[idx] += h;
                let mut minus = flat.clone();
                minus[idx] -= h;
                let net_p = MlpParams::from_flat(base.layer_sizes(), &plus).unwrap();
                let net_m = MlpParams::from_flat(base.layer_sizes(), &minus).unwrap();
                let (fp, fm) = if which == 0 {
                    (plain_residual_loss(&net_p, &k, &pts), plain_residual_loss(&net_m, &k, &pts))
                } else {
                    (plain_residual_loss(&u, &net_p, &pts), plain_residual_loss(&u, &net_m, &pts))
                };
                let fd = (fp - fm) / (2.0 * h);
                if fd.abs() > 1e-8 && g.0[idx].abs() > 1e-8 {
                    assert!(rel_err(g.0[idx], fd) < 1e-5, "net {which} param {idx}: {} vs {fd}", g.0[idx]);
                }
            }
        }
    }

    #[test]
    fn gradient_through_network_inputs_matches_finite_differences() {
        // K(u(x)) composition: the second network is evaluated at the first one's output.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = init_xavier(&[2, 6, 6, 1], 4).unwrap();
        let k = init_xavier(&[1, 6, 6, 1], 5).unwrap();
        let pts = random_points(&mut rng, 6, 2);
        let build = |tape: &mut Tape, pts: &[f64]| {
            let uj = tape.jets(0, pts, JetOrder::Hessian);
            let inputs: Vec<Var> = (0..uj.len()).map(|p| uj.value(p)).collect();
            let kj = tape.jets_at(1, &inputs, JetOrder::Gradient);
            let mut terms = Vec::new();
            for p in 0..uj.len() {
                let gx = tape.square(uj.grad(p, 0));
                let gy = tape.square(uj.grad(p, 1));
                let g2 = tape.add(gx, gy);
                let a = tape.mul(kj.grad(p, 0), g2);
                let lap = tape.add(uj.hess(p, 0, 0), uj.hess(p, 1, 1));
                let b = tape.mul(kj.value(p), lap);
                let r = tape.add(a, b);
                terms.push(tape.square(r));
            }
            tape.sum(&terms)
        };
        let plain = |u: &MlpParams, k: &MlpParams| -> f64 {
            pts.chunks(2)
                .map(|x| {
                    let ju = u.eval_jet(x).unwrap();
                    let jk = k.eval_jet(&[ju.value]).unwrap();
                    let g2 = ju.grad[0].powi(2) + ju.grad[1].powi(2);
                    let r = jk.grad[0] * g2 + jk.value * ju.laplacian();
                    r * r
                })
                .sum()
        };
        let (_, grads) = loss_param_gradient(&[&u, &k], |t| Ok(build(t, &pts))).unwrap();
        let h = 1e-5;
        let flat = u.to_flat();
        for idx in 0..flat.len() {
            let mut plus = flat.clone();
            plus[idx] += h;
            let mut minus = flat.clone();
            minus[idx] -= h;
            let fp = plain(&MlpParams::from_flat(u.layer_sizes(), &plus).unwrap(), &k);
            let fm = plain(&MlpParams::from_flat(u.layer_sizes(), &minus).unwrap(), &k);
            let fd = (fp - fm) / (2.0 * h);
            if fd.abs() > 1e-8 && grads[0].0[idx].abs() > 1e-8 {
                assert!(rel_err(grads[0].0[idx], fd) < 1e-5, "param {idx}: {} vs {fd}", grads[0].0[idx]);
            }
        }
    }

    #[test]
    fn affine_least_squares_gradient_is_closed_form() {
        // u(x) = w.x + b, loss = sum (u(x_i) - y_i)^2
        let net = MlpParams::from_parts(vec![2, 1], vec![vec![0.3, -0.8]], vec![vec![0.1]]).unwrap();
        let xs = [[0.1, 0.2], [0.5, -0.3], [-0.7, 0.9]];
        let ys = [0.4, -0.2, 1.1];
        let pts: Vec<f64> = xs.iter().flatten().copied().collect();
        let (_, grads) = loss_param_gradient(&[&net], |t| {
            let j = t.jets(0, &pts, JetOrder::Value);
            let terms: Vec<Var> = (0..3)
                .map(|p| {
                    let r = t.add_const(j.value(p), -ys[p]);
                    t.square(r)
                })
                .collect();
            Ok(t.sum(&terms))
        })
        .unwrap();
        let mut expected = [0.0; 3];
        for (x, y) in xs.iter().zip(ys) {
            let r = 0.3 * x[0] - 0.8 * x[1] + 0.1 - y;
            expected[0] += 2.0 * r * x[0];
            expected[1] += 2.0 * r * x[1];
            expected[2] += 2.0 * r;
        }
        for (g, e) in grads[0].0.iter().zip(expected) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_is_linear_in_loss_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = init_xavier(&[2, 5, 1], 8).unwrap();
        let k = init_xavier(&[2, 5, 1], 9).unwrap();
        let pts = random_points(&mut rng, 4, 2);
        let (_, g1) = loss_param_gradient(&[&u, &k], |t| Ok(residual_loss(t, &pts))).unwrap();
        let (_, g3) = loss_param_gradient(&[&u, &k], |t| {
            let l = residual_loss(t, &pts);
            Ok(t.scale(l, 3.0))
        })
        .unwrap();
        for (a, b) in g1.iter().zip(&g3) {
            let scale = b.norm();
            for (x, y) in a.0.iter().zip(&b.0) {
                assert!((3.0 * x - y).abs() <= 1e-14 * scale);
            }
        }
    }

    #[test]
    fn stationary_at_exact_fit() {
        let net = init_xavier(&[2, 4, 1], 12).unwrap();
        let x0 = [0.3, -0.4];
        let c = net.forward(&x0).unwrap();
        let (v, g) = loss_param_gradient(&[&net], |t| {
            let j = t.jets(0, &x0, JetOrder::Value);
            let r = t.add_const(j.value(0), -c);
            Ok(t.square(r))
        })
        .unwrap();
        assert!(v < 1e-24);
        assert!(g[0].norm() < 1e-12);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let net = init_xavier(&[1, 2, 1], 0).unwrap();
        let res = loss_param_gradient(&[&net], |t| Ok(t.constant(f64::NAN)));
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
