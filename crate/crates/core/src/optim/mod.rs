//! Limited-memory BFGS with a strong Wolfe line search.

mod linesearch;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use linesearch::{wolfe_line_search, LineSearchOutcome};

use crate::error::{Error, Result};

/// Objective returning value and gradient at a point.
pub trait Objective {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `|g| <= grad_tolerance * max(1, |g0|)`.
    pub grad_tolerance: f64,
    /// Stop when the relative loss decrease over the last five iterations
    /// falls to this value or below.
    pub loss_change_tolerance: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 50_000,
            grad_tolerance: 1e-9,
            loss_change_tolerance: 0.0,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_steps: 30,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 || self.max_iterations == 0 || self.max_line_search_steps == 0 {
            return Err(Error::InvalidConfig(
                "memory, max_iterations and max_line_search_steps must be positive".into(),
            ));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "Wolfe constants must satisfy 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if !(self.grad_tolerance > 0.0) || self.loss_change_tolerance < 0.0 {
            return Err(Error::InvalidConfig("tolerances out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Gradient,
    LossChange,
    MaxIterations,
    LineSearchFailure,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Termination::Gradient => "gradient",
            Termination::LossChange => "loss-change",
            Termination::MaxIterations => "max-iter",
            Termination::LineSearchFailure => "line-search-failure",
        };
        f.write_str(s)
    }
}

/// One accepted line-search step, kept so the Wolfe conditions can be audited.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: f64,
    pub f0: f64,
    pub slope0: f64,
    pub f_new: f64,
    pub slope_new: f64,
}

impl StepRecord {
    pub fn satisfies_strong_wolfe(&self, c1: f64, c2: f64) -> bool {
        self.f_new <= self.f0 + c1 * self.step * self.slope0 && self.slope_new.abs() <= c2 * self.slope0.abs()
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub iterations: usize,
    /// Loss at the start and after every accepted iteration.
    pub losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub final_grad_norm: f64,
    pub termination: Termination,
    pub evaluations: usize,
    pub wall_time_s: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap()
    }

    /// CSV with columns `iteration,loss,grad_norm`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,grad_norm\n");
        for (k, (l, g)) in self.losses.iter().zip(&self.grad_norms).enumerate() {
            out.push_str(&format!("{k},{l:.17e},{g:.17e}\n"));
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    capacity: usize,
}

impl History {
    fn new(capacity: usize) -> Self {
        Self {
            pairs: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-12 * norm(&s) * norm(&y) {
            // curvature pair would break positive definiteness
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

#[cfg(not(target_arch = "wasm32"))]
fn clock() -> impl Fn() -> f64 {
    let start = web_time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
fn clock() -> impl Fn() -> f64 {
    || 0.0
}

/// Minimizes `objective` from `x0`. Returns the best iterate seen.
///
/// A failed line search first discards the curvature history and retries
/// along the steepest-descent direction; a second consecutive failure ends
/// the run with [`Termination::LineSearchFailure`].
pub fn lbfgs_minimize<O: Objective>(
    objective: &mut O,
    x0: &[f64],
    config: &LbfgsConfig,
) -> Result<(Vec<f64>, TrainReport)> {
    config.validate()?;
    let elapsed = clock();
    let mut x = x0.to_vec();
    let (mut f, mut g) = objective.eval(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the initial point".into()));
    }
    let mut evaluations = 1;
    let g0_norm = norm(&g);
    let gtol = config.grad_tolerance * g0_norm.max(1.0);
    let mut history = History::new(config.memory);
    let mut losses = vec![f];
    let mut grad_norms = vec![g0_norm];
    let mut steps = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut fresh_restart = false;

    if g0_norm <= gtol {
        termination = Termination::Gradient;
    } else {
        while iterations < config.max_iterations {
            let mut d = history.direction(&g);
            let mut slope = dot(&g, &d);
            if !(slope < 0.0) {
                history.clear();
                d = g.iter().map(|v| -v).collect();
                slope = dot(&g, &d);
            }
            let initial_step = if history.pairs.is_empty() {
                (1.0 / norm(&d)).min(1.0)
            } else {
                1.0
            };
            let outcome = wolfe_line_search(objective, &x, f, &g, &d, initial_step, config);
            let ls = match outcome {
                Ok(ls) => ls,
                Err(Error::LineSearch(_)) => {
                    if fresh_restart || history.pairs.is_empty() {
                        termination = Termination::LineSearchFailure;
                        break;
                    }
                    history.clear();
                    fresh_restart = true;
                    continue;
                }
                Err(e) => return Err(e),
            };
            fresh_restart = false;
            evaluations += ls.evaluations;
            steps.push(StepRecord {
                step: ls.step,
                f0: f,
                slope0: slope,
                f_new: ls.f,
                slope_new: dot(&ls.g, &d),
            });
            let s: Vec<f64> = d.iter().map(|di| ls.step * di).collect();
            let y: Vec<f64> = ls.g.iter().zip(&g).map(|(a, b)| a - b).collect();
            history.push(s, y);
            x = ls.x;
            f = ls.f;
            g = ls.g;
            iterations += 1;
            let gn = norm(&g);
            losses.push(f);
            grad_norms.push(gn);

            if gn <= gtol {
                termination = Termination::Gradient;
                break;
            }
            if config.loss_change_tolerance > 0.0 && losses.len() > 5 {
                let old = losses[losses.len() - 6];
                let rel = (old - f) / old.abs().max(f.abs()).max(f64::MIN_POSITIVE);
                if rel <= config.loss_change_tolerance {
                    termination = Termination::LossChange;
                    break;
                }
            }
        }
    }

    let final_grad_norm = *grad_norms.last().unwrap();
    Ok((
        x,
        TrainReport {
            iterations,
            losses,
            grad_norms,
            steps,
            final_grad_norm,
            termination,
            evaluations,
            wall_time_s: elapsed(),
        },
    ))
}
