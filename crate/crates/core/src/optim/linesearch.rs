use super::{dot, LbfgsConfig, Objective};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub step: f64,
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub evaluations: usize,
}

#[derive(Clone, Copy)]
struct Sample {
    a: f64,
    phi: f64,
    dphi: f64,
}

/// Minimizer of the cubic matching values and slopes at `lo` and `hi`,
/// kept inside the central 80% of the bracket; bisection when the cubic
/// is degenerate.
fn cubic_step(lo: Sample, hi: Sample) -> f64 {
    let width = hi.a - lo.a;
    let bisect = lo.a + 0.5 * width;
    if !(hi.phi.is_finite() && hi.dphi.is_finite()) {
        return bisect;
    }
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.phi - hi.phi) / (lo.a - hi.a);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    if disc < 0.0 {
        return bisect;
    }
    let d2 = width.signum() * disc.sqrt();
    let denom = hi.dphi - lo.dphi + 2.0 * d2;
    if denom == 0.0 {
        return bisect;
    }
    let a = hi.a - width * (hi.dphi + d2 - d1) / denom;
    let (left, right) = if width > 0.0 {
        (lo.a + 0.1 * width, hi.a - 0.1 * width)
    } else {
        (hi.a - 0.1 * width, lo.a + 0.1 * width)
    };
    if a.is_finite() {
        a.clamp(left, right)
    } else {
        bisect
    }
}

struct Probe<'a, O> {
    objective: &'a mut O,
    x: &'a [f64],
    d: &'a [f64],
    evaluations: usize,
    best: Option<(f64, Vec<f64>, f64, Vec<f64>)>,
}

impl<O: Objective> Probe<'_, O> {
    fn eval(&mut self, a: f64) -> Result<Sample> {
        let xa: Vec<f64> = self.x.iter().zip(self.d).map(|(xi, di)| xi + a * di).collect();
        self.evaluations += 1;
        let (phi, g) = match self.objective.eval(&xa) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => {
                return Ok(Sample {
                    a,
                    phi: f64::INFINITY,
                    dphi: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        let dphi = dot(&g, self.d);
        self.best = Some((a, xa, phi, g));
        Ok(Sample { a, phi, dphi })
    }

    fn accept(self, s: Sample) -> LineSearchOutcome {
        let (a, x, f, g) = self.best.expect("accepted sample was evaluated last");
        debug_assert_eq!(a, s.a);
        LineSearchOutcome {
            step: a,
            x,
            f,
            g,
            evaluations: self.evaluations,
        }
    }
}

/// Finds a step along `d` from `x` that satisfies the strong Wolfe
/// conditions with the constants in `config`.
pub fn wolfe_line_search<O: Objective>(
    objective: &mut O,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    initial_step: f64,
    config: &LbfgsConfig,
) -> Result<LineSearchOutcome> {
    let dphi0 = dot(g0, d);
    if !(dphi0 < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "line search direction is not a descent direction (slope {dphi0})"
        )));
    }
    let (c1, c2) = (config.c1, config.c2);
    let armijo = |s: &Sample| s.phi <= f0 + c1 * s.a * dphi0;
    let curvature = |s: &Sample| s.dphi.abs() <= -c2 * dphi0;

    let mut probe = Probe {
        objective,
        x,
        d,
        evaluations: 0,
        best: None,
    };
    let mut prev = Sample {
        a: 0.0,
        phi: f0,
        dphi: dphi0,
    };
    let mut a = initial_step;
    let budget = config.max_line_search_steps;

    let (mut lo, mut hi) = loop {
        if probe.evaluations >= budget {
            return Err(Error::LineSearch("no bracket found within the step budget".into()));
        }
        let s = probe.eval(a)?;
        if !armijo(&s) || (probe.evaluations > 1 && s.phi >= prev.phi) {
            break (prev, s);
        }
        if curvature(&s) {
            return Ok(probe.accept(s));
        }
        if s.dphi >= 0.0 {
            break (s, prev);
        }
        prev = s;
        a *= 2.0;
    };

    loop {
        if probe.evaluations >= budget {
            return Err(Error::LineSearch("zoom did not converge within the step budget".into()));
        }
        if (hi.a - lo.a).abs() <= f64::EPSILON * lo.a.abs().max(hi.a.abs()) {
            return Err(Error::LineSearch("bracket collapsed".into()));
        }
        let s = probe.eval(cubic_step(lo, hi))?;
        if !armijo(&s) || s.phi >= lo.phi {
            hi = s;
        } else {
            if curvature(&s) {
                return Ok(probe.accept(s));
            }
            if s.dphi * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = s;
        }
    }
}
