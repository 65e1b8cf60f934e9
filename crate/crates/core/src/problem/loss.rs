//! Composite loss assembly on the differentiation tape.

use serde::{Deserialize, Serialize};

use super::residual::edge_direction;
use super::{PinnModel, PinnProblem, ProblemKind, Surrogate, TermSpec};
use crate::autodiff::{loss_param_gradient, NetJets, Tape, Var};
use crate::error::{Error, Result};
use crate::grid::Point;
use crate::nn::batch::JetOrder;

const U_NET: usize = 0;
const K_NET: usize = 1;

/// Unweighted mean of every enabled term, and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_k: Option<f64>,
    pub data_u: Option<f64>,
    pub dirichlet: Option<f64>,
    pub neumann: Option<f64>,
    pub residual: Option<f64>,
    pub total: f64,
}

#[derive(Default)]
struct TermVars {
    data_k: Option<Var>,
    data_u: Option<Var>,
    dirichlet: Option<Var>,
    neumann: Option<Var>,
    residual: Option<Var>,
}

fn net_inputs(s: &Surrogate, points: &[Point]) -> Vec<f64> {
    s.input.apply_rows(points.as_flattened())
}

/// Output of surrogate `s` for point `p` of a batch, with the softplus
/// transform applied when the surrogate is positive.
fn out_value(tape: &mut Tape, s: &Surrogate, jets: &NetJets, p: usize) -> Var {
    let n = jets.value(p);
    if s.positive {
        tape.softplus(n)
    } else {
        n
    }
}

/// Physical derivatives of surrogate `s` at point `p`: `d s / d x_i` for every input.
fn out_grad(tape: &mut Tape, s: &Surrogate, jets: &NetJets, p: usize) -> Vec<Var> {
    let gate = s.positive.then(|| tape.sigmoid(jets.value(p)));
    (0..s.dim())
        .map(|i| {
            let g = tape.scale(jets.grad(p, i), s.input.scale[i]);
            match gate {
                Some(sig) => tape.mul(sig, g),
                None => g,
            }
        })
        .collect()
}

/// Mean of squared differences `(pred_i - target_i)^2`.
fn mean_square(tape: &mut Tape, preds: &[Var], targets: &[f64]) -> Var {
    let sq: Vec<Var> = preds
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let d = tape.add_const(p, -t);
            tape.square(d)
        })
        .collect();
    tape.mean(&sq)
}

/// Values of the coefficient surrogate at states given as tape variables,
/// with `d K / d u` when `with_slope` is set.
fn k_of_states(tape: &mut Tape, k: &Surrogate, states: &[Var], with_slope: bool) -> (Vec<Var>, Vec<Var>) {
    let (a, b) = (k.input.scale[0], k.input.shift[0]);
    let inputs: Vec<Var> = states
        .iter()
        .map(|&u| {
            let w = tape.scale(u, a);
            tape.add_const(w, b)
        })
        .collect();
    let order = if with_slope {
        JetOrder::Gradient
    } else {
        JetOrder::Value
    };
    let jets = tape.jets_at(K_NET, &inputs, order);
    let values = (0..states.len()).map(|p| out_value(tape, k, &jets, p)).collect();
    let slopes = if with_slope {
        (0..states.len())
            .map(|p| out_grad(tape, k, &jets, p)[0])
            .collect()
    } else {
        Vec::new()
    };
    (values, slopes)
}

fn build(tape: &mut Tape, problem: &PinnProblem, model: &PinnModel) -> TermVars {
    let m = &problem.measurements;
    let spec = &problem.loss;
    let mut terms = TermVars::default();

    if spec.data_k.enabled {
        let preds: Vec<Var> = match problem.kind {
            ProblemKind::Linear => {
                let jets = tape.jets(K_NET, &net_inputs(&model.k, &m.k.points), JetOrder::Value);
                (0..m.k.len()).map(|p| out_value(tape, &model.k, &jets, p)).collect()
            }
            ProblemKind::Nonlinear => {
                let ju = tape.jets(U_NET, &net_inputs(&model.u, &m.k.points), JetOrder::Value);
                let states: Vec<Var> = (0..m.k.len()).map(|p| ju.value(p)).collect();
                k_of_states(tape, &model.k, &states, false).0
            }
        };
        terms.data_k = Some(mean_square(tape, &preds, &m.k.values));
    }
    if spec.data_u.enabled {
        let jets = tape.jets(U_NET, &net_inputs(&model.u, &m.u.points), JetOrder::Value);
        let preds: Vec<Var> = (0..m.u.len()).map(|p| jets.value(p)).collect();
        terms.data_u = Some(mean_square(tape, &preds, &m.u.values));
    }
    if spec.dirichlet.enabled {
        let d = &m.dirichlet;
        let jets = tape.jets(U_NET, &net_inputs(&model.u, &d.points), JetOrder::Value);
        let preds: Vec<Var> = (0..d.len()).map(|p| jets.value(p)).collect();
        terms.dirichlet = Some(mean_square(tape, &preds, &d.values));
    }
    if spec.neumann.enabled {
        terms.neumann = Some(neumann_term(tape, problem, model));
    }
    if spec.residual.enabled {
        terms.residual = Some(residual_term(tape, problem, model));
    }
    terms
}

/// Flux misfit, averaged separately over the samples of each flux direction
/// and summed over directions.
fn neumann_term(tape: &mut Tape, problem: &PinnProblem, model: &PinnModel) -> Var {
    let n = &problem.measurements.neumann;
    let jets = tape.jets(U_NET, &net_inputs(&model.u, &n.points), JetOrder::Gradient);
    let dirs: Vec<usize> = n.edges.iter().map(|&e| edge_direction(e)).collect();
    let fluxes: Vec<Var> = match problem.kind {
        ProblemKind::Linear => (0..n.len())
            .map(|p| tape.scale(jets.grad(p, dirs[p]), model.u.input.scale[dirs[p]]))
            .collect(),
        ProblemKind::Nonlinear => {
            let states: Vec<Var> = (0..n.len()).map(|p| jets.value(p)).collect();
            let (kv, _) = k_of_states(tape, &model.k, &states, false);
            (0..n.len())
                .map(|p| {
                    let du = tape.scale(jets.grad(p, dirs[p]), -model.u.input.scale[dirs[p]]);
                    tape.mul(kv[p], du)
                })
                .collect()
        }
    };
    let mut groups = Vec::new();
    for dir in 0..2 {
        let idx: Vec<usize> = (0..n.len()).filter(|&p| dirs[p] == dir).collect();
        if idx.is_empty() {
            continue;
        }
        let preds: Vec<Var> = idx.iter().map(|&p| fluxes[p]).collect();
        let targets: Vec<f64> = idx.iter().map(|&p| n.values[p]).collect();
        groups.push(mean_square(tape, &preds, &targets));
    }
    tape.sum(&groups)
}

fn residual_term(tape: &mut Tape, problem: &PinnProblem, model: &PinnModel) -> Var {
    let pts = &problem.collocation.interior;
    let ju = tape.jets(U_NET, &net_inputs(&model.u, pts), JetOrder::Hessian);
    let au = &model.u.input.scale;
    let np = pts.len();
    let mut grads = Vec::with_capacity(np);
    let mut laps = Vec::with_capacity(np);
    for p in 0..np {
        let gx = tape.scale(ju.grad(p, 0), au[0]);
        let gy = tape.scale(ju.grad(p, 1), au[1]);
        grads.push([gx, gy]);
        let hxx = tape.scale(ju.hess(p, 0, 0), au[0] * au[0]);
        let hyy = tape.scale(ju.hess(p, 1, 1), au[1] * au[1]);
        laps.push(tape.add(hxx, hyy));
    }
    let residuals: Vec<Var> = match problem.kind {
        ProblemKind::Linear => {
            let jk = tape.jets(K_NET, &net_inputs(&model.k, pts), JetOrder::Gradient);
            (0..np)
                .map(|p| {
                    let kv = out_value(tape, &model.k, &jk, p);
                    let kg = out_grad(tape, &model.k, &jk, p);
                    let a = tape.mul(kg[0], grads[p][0]);
                    let b = tape.mul(kg[1], grads[p][1]);
                    let c = tape.mul(kv, laps[p]);
                    let ab = tape.add(a, b);
                    tape.add(ab, c)
                })
                .collect()
        }
        ProblemKind::Nonlinear => {
            let states: Vec<Var> = (0..np).map(|p| ju.value(p)).collect();
            let (kv, ks) = k_of_states(tape, &model.k, &states, true);
            (0..np)
                .map(|p| {
                    let gx2 = tape.square(grads[p][0]);
                    let gy2 = tape.square(grads[p][1]);
                    let g2 = tape.add(gx2, gy2);
                    let a = tape.mul(ks[p], g2);
                    let c = tape.mul(kv[p], laps[p]);
                    tape.add(a, c)
                })
                .collect()
        }
    };
    let sq: Vec<Var> = residuals.iter().map(|&r| tape.square(r)).collect();
    tape.mean(&sq)
}

/// Weighted total on the tape plus the unweighted term values.
fn total(tape: &mut Tape, problem: &PinnProblem, model: &PinnModel) -> (Var, LossBreakdown) {
    let terms = build(tape, problem, model);
    let spec = &problem.loss;
    let pairs: [(Option<Var>, TermSpec); 5] = [
        (terms.data_k, spec.data_k),
        (terms.data_u, spec.data_u),
        (terms.dirichlet, spec.dirichlet),
        (terms.neumann, spec.neumann),
        (terms.residual, spec.residual),
    ];
    let weighted: Vec<Var> = pairs
        .iter()
        .filter_map(|(v, t)| v.map(|v| tape.scale(v, t.weight)))
        .collect();
    let out = tape.sum(&weighted);
    let value = |v: Option<Var>| v.map(|v| tape.value(v));
    let breakdown = LossBreakdown {
        data_k: value(terms.data_k),
        data_u: value(terms.data_u),
        dirichlet: value(terms.dirichlet),
        neumann: value(terms.neumann),
        residual: value(terms.residual),
        total: tape.value(out),
    };
    (out, breakdown)
}

fn check(problem: &PinnProblem, model: &PinnModel) -> Result<()> {
    if problem.kind != model.kind {
        return Err(Error::InvalidConfig(format!(
            "model is for the {:?} problem but the problem is {:?}",
            model.kind, problem.kind
        )));
    }
    problem.validate()
}

/// The composite loss: a weighted sum of the mean squared misfits of the
/// coefficient data, state data, Dirichlet samples, Neumann fluxes and PDE
/// residuals, with each unweighted mean reported separately.
pub fn assemble_loss(problem: &PinnProblem, model: &PinnModel) -> Result<(f64, LossBreakdown)> {
    check(problem, model)?;
    let mut tape = Tape::new(&[&model.u.net, &model.k.net]);
    let (_, breakdown) = total(&mut tape, problem, model);
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    Ok((breakdown.total, breakdown))
}

/// Loss, breakdown and the gradient with respect to the flat parameter
/// vector of the model ([`PinnModel::to_flat`] layout).
pub fn loss_and_gradient(problem: &PinnProblem, model: &PinnModel) -> Result<(f64, LossBreakdown, Vec<f64>)> {
    check(problem, model)?;
    loss_and_gradient_unchecked(problem, model)
}

pub(crate) fn loss_and_gradient_unchecked(
    problem: &PinnProblem,
    model: &PinnModel,
) -> Result<(f64, LossBreakdown, Vec<f64>)> {
    let mut breakdown = LossBreakdown::default();
    let (value, grads) = loss_param_gradient(&[&model.u.net, &model.k.net], |tape| {
        let (out, b) = total(tape, problem, model);
        breakdown = b;
        Ok(out)
    })?;
    let mut flat = Vec::with_capacity(model.num_params());
    for g in grads {
        flat.extend(g.0);
    }
    Ok((value, breakdown, flat))
}
