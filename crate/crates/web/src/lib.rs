//! Browser bindings: draw a random conductivity field and solve for the
//! pressure, solve the unsaturated flow problem for chosen closure
//! parameters, and fit a small PINN to sparse measurements step by step.

use pidnn_core::optim::LbfgsConfig;
use pidnn_core::problem::{build_linear_problem, train, PinnModel, ProblemConfig, ProblemSetup};
use pidnn_core::synth::{
    fv_solve_linear, fv_solve_vangenuchten, sample_gp_lnk, BoundarySpec, GpConfig, PicardConfig, VanGenuchtenParams,
};
use pidnn_core::Grid2D;
use wasm_bindgen::prelude::*;

fn text(e: pidnn_core::Error) -> String {
    e.to_string()
}

/// A log-normal conductivity field on the unit square and the pressure it
/// produces under a unit vertical head drop. Values are row by row, bottom
/// row first.
#[wasm_bindgen]
pub struct DarcyField {
    n: usize,
    ln_k: Vec<f64>,
    u: Vec<f64>,
}

#[wasm_bindgen]
impl DarcyField {
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, sigma: f64, lambda: f64, seed: u32) -> Result<DarcyField, String> {
        if !(2..=64).contains(&n) {
            return Err(format!("grid size must lie in 2..=64, got {n}"));
        }
        let grid = Grid2D::unit_square(n);
        let cfg = GpConfig {
            sigma,
            lambda,
            seed: seed as u64,
        };
        let ln_k = sample_gp_lnk(grid, &cfg).map_err(text)?;
        let u = fv_solve_linear(&ln_k.map(f64::exp), &BoundarySpec::linear_default()).map_err(text)?;
        Ok(Self {
            n,
            ln_k: ln_k.values,
            u: u.values,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ln_k(&self) -> Vec<f64> {
        self.ln_k.clone()
    }

    pub fn u(&self) -> Vec<f64> {
        self.u.clone()
    }
}

/// Steady horizontal unsaturated flow through a 10 m square: influx on the
/// west edge, fixed head on the east edge.
#[wasm_bindgen]
pub struct UnsaturatedFlow {
    x: Vec<f64>,
    head: Vec<f64>,
    curve_u: Vec<f64>,
    curve_k: Vec<f64>,
    iterations: usize,
}

#[wasm_bindgen]
impl UnsaturatedFlow {
    /// `q_ratio` is the influx as a fraction of the saturated conductivity.
    #[wasm_bindgen(constructor)]
    pub fn new(alpha: f64, m: f64, q_ratio: f64) -> Result<UnsaturatedFlow, String> {
        let vg = VanGenuchtenParams {
            alpha,
            m,
            q: q_ratio * VanGenuchtenParams::default().ks,
            ..Default::default()
        };
        vg.validate().map_err(text)?;
        let n = 24;
        let grid = Grid2D::new(n, 4, 10.0, 10.0).map_err(text)?;
        let bc = BoundarySpec::unsaturated(vg.u0, vg.q);
        let picard = PicardConfig {
            max_iterations: 2000,
            ..Default::default()
        };
        let (u, report) = fv_solve_vangenuchten(grid, &vg, &bc, &picard).map_err(text)?;
        // The solution does not vary across rows, so one row is the profile.
        let head: Vec<f64> = u.values[..n].to_vec();
        let x = (0..n).map(|i| grid.centroid(i)[0]).collect();
        let lo = head.iter().cloned().fold(vg.u0, f64::min) * 1.5;
        let curve_u: Vec<f64> = (0..=100).map(|i| lo * (1.0 - i as f64 / 100.0)).collect();
        let curve_k = curve_u.iter().map(|&v| vg.conductivity(v) / vg.ks).collect();
        Ok(Self {
            x,
            head,
            curve_u,
            curve_k,
            iterations: report.iterations,
        })
    }

    /// Cell-centre positions along the flow direction (m).
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }

    /// Pressure head along the flow direction (m).
    pub fn head(&self) -> Vec<f64> {
        self.head.clone()
    }

    /// Heads at which the closure is tabulated (m).
    pub fn curve_u(&self) -> Vec<f64> {
        self.curve_u.clone()
    }

    /// Relative conductivity `K(u) / K_s` at `curve_u`.
    pub fn curve_k(&self) -> Vec<f64> {
        self.curve_k.clone()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

/// A small PINN fitted to measurements of a random field, advanced a few
/// optimizer iterations at a time.
#[wasm_bindgen]
pub struct PinnFit {
    setup: ProblemSetup,
    model: PinnModel,
    iterations: usize,
    loss: f64,
}

#[wasm_bindgen]
impl PinnFit {
    #[wasm_bindgen(constructor)]
    pub fn new(n_obs: usize, n_colloc: usize, seed: u32) -> Result<PinnFit, String> {
        let cfg = ProblemConfig {
            grid: Some(Grid2D::unit_square(12)),
            gp: GpConfig {
                seed: seed as u64,
                lambda: 0.3,
                ..Default::default()
            },
            n_k: Some(n_obs),
            n_u: n_obs,
            n_c: n_colloc,
            n_boundary: 8,
            hidden: vec![12, 12],
            measurement_seed: seed as u64,
            collocation_seed: seed as u64,
            ..Default::default()
        };
        let setup = build_linear_problem(&cfg).map_err(text)?;
        let model = setup.model(seed as u64).map_err(text)?;
        Ok(Self {
            setup,
            model,
            iterations: 0,
            loss: f64::NAN,
        })
    }

    /// Runs up to `iterations` L-BFGS iterations and returns the loss.
    pub fn step(&mut self, iterations: usize) -> Result<f64, String> {
        let cfg = LbfgsConfig {
            max_iterations: iterations.max(1),
            ..Default::default()
        };
        let out = train(&self.setup.problem, self.model.clone(), &cfg).map_err(text)?;
        self.iterations += out.report.iterations;
        self.loss = out.report.final_loss();
        self.model = out.model;
        Ok(self.loss)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    pub fn n(&self) -> usize {
        self.setup.grid.nx
    }

    /// Relative squared errors `[eps_u, eps_K]`.
    pub fn errors(&self) -> Result<Vec<f64>, String> {
        let e = self.setup.evaluate(&self.model).map_err(text)?;
        Ok(vec![e.eps_u, e.eps_k])
    }

    pub fn k_hat(&self) -> Vec<f64> {
        self.setup.predict_k(&self.model).values
    }

    pub fn k_ref(&self) -> Vec<f64> {
        self.setup.reference.as_ref().map(|r| r.k.values.clone()).unwrap_or_default()
    }

    /// Measurement locations as `x0, y0, x1, y1, ...`.
    pub fn k_points(&self) -> Vec<f64> {
        self.setup.observed_k.points.iter().flatten().copied().collect()
    }
}
