//! Study orchestration: restarts, sweeps, the MAP comparison and the noise
//! study, with deterministic CSV artifacts.

use std::fmt::Write as _;
use std::path::Path;
use web_time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Field;
use crate::map::{map_estimate, MapConfig};
use crate::optim::LbfgsConfig;
use crate::problem::{
    build_linear_problem, build_nonlinear_problem, relative_error, train, ProblemConfig, ProblemKind, ProblemSetup,
    Reference,
};

/// Header of every aggregate table.
pub const SWEEP_CSV_HEADER: &str = "sweep_var,eps_u_mean,eps_u_std,eps_K_mean,eps_K_std,n_runs,n_failed";

/// Header of the per-run table.
pub const RUNS_CSV_HEADER: &str = "sweep_var,method,run,seed,status,eps_u,eps_K,iterations,final_objective,termination";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "single-run")]
    SingleRun,
    #[serde(rename = "restart-study")]
    RestartStudy,
    #[serde(rename = "collocation-sweep")]
    CollocationSweep,
    #[serde(rename = "nK-sweep")]
    NkSweep,
    #[serde(rename = "nU-sweep")]
    NuSweep,
    #[serde(rename = "map-vs-pinn")]
    MapVsPinn,
    #[serde(rename = "nonlinear")]
    Nonlinear,
    #[serde(rename = "nonlinear-noisy")]
    NonlinearNoisy,
}

impl ExperimentKind {
    /// Name of the swept quantity, written next to the tables.
    pub fn sweep_variable(self) -> &'static str {
        match self {
            ExperimentKind::SingleRun | ExperimentKind::RestartStudy | ExperimentKind::CollocationSweep => "n_c",
            ExperimentKind::NkSweep => "n_k",
            ExperimentKind::NuSweep => "n_u",
            ExperimentKind::MapVsPinn => "n",
            ExperimentKind::Nonlinear | ExperimentKind::NonlinearNoisy => "noise_level",
        }
    }

    fn is_nonlinear(self) -> bool {
        matches!(self, ExperimentKind::Nonlinear | ExperimentKind::NonlinearNoisy)
    }
}

/// One study. Problem sizes not swept are taken from `problem`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub problem: ProblemConfig,
    pub lbfgs: LbfgsConfig,
    pub map: MapConfig,
    /// Independent runs per row.
    pub restarts: usize,
    /// Swept values; the default depends on the kind.
    pub sweep: Option<Vec<usize>>,
    /// Size of the measurement set held fixed in the N_K and N_u sweeps.
    pub fixed_count: usize,
    /// Noise level of the noisy row of `nonlinear-noisy`.
    pub noise_level: f64,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::SingleRun,
            problem: ProblemConfig::default(),
            lbfgs: LbfgsConfig {
                max_iterations: 20_000,
                ..Default::default()
            },
            map: MapConfig::default(),
            restarts: 11,
            sweep: None,
            fixed_count: 20,
            noise_level: 0.01,
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for `kind`, with the nonlinear problem where it applies.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        let problem = if kind.is_nonlinear() {
            ProblemConfig::nonlinear()
        } else {
            ProblemConfig::default()
        };
        Self {
            kind,
            problem,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The swept values, with the per-kind default when none are given.
    pub fn sweep_values(&self) -> Vec<usize> {
        if let Some(v) = &self.sweep {
            return v.clone();
        }
        match self.kind {
            ExperimentKind::CollocationSweep => vec![0, 64, 128, 256, 512, 1024],
            ExperimentKind::NkSweep | ExperimentKind::NuSweep => vec![20, 50, 100, 200, 400],
            ExperimentKind::MapVsPinn => vec![50],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.lbfgs.validate()?;
        self.map.validate()?;
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if self.kind.is_nonlinear() != (self.problem.kind == ProblemKind::Nonlinear) {
            return Err(Error::InvalidConfig(format!(
                "experiment {:?} does not match the {:?} problem",
                self.kind, self.problem.kind
            )));
        }
        if matches!(
            self.kind,
            ExperimentKind::CollocationSweep | ExperimentKind::NkSweep | ExperimentKind::NuSweep | ExperimentKind::MapVsPinn
        ) && self.sweep_values().is_empty()
        {
            return Err(Error::InvalidConfig("sweep list must be nonempty".into()));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise level must be >= 0, got {}", self.noise_level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pinn,
    Map,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pinn => "pinn",
            Method::Map => "map",
        }
    }
}

/// Output of one successful run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub eps_u: f64,
    pub eps_k: f64,
    pub iterations: usize,
    pub final_objective: f64,
    pub termination: String,
    pub wall_time_s: f64,
    pub u_hat: Field,
    pub k_hat: Field,
    /// Objective history as CSV.
    pub history_csv: String,
    /// `u,K_ref,K_hat` over the reference state range (nonlinear runs).
    pub k_curve_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub sweep_value: f64,
    pub method: Method,
    /// Run index within the experiment.
    pub run: usize,
    pub seed: u64,
    pub outcome: std::result::Result<RunMetrics, String>,
}

/// Aggregate over the runs of one sweep value.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sweep_value: f64,
    /// `None` when every run failed.
    pub eps_u: Option<(f64, f64)>,
    pub eps_k: Option<(f64, f64)>,
    pub eps_u_raw: Vec<f64>,
    pub eps_k_raw: Vec<f64>,
    pub n_runs: usize,
    pub n_failed: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub variable: &'static str,
    pub rows: Vec<SweepRow>,
}

/// Mean and population standard deviation (divisor `n`) of the per-run errors.
pub fn compute_restart_stats(raw: &[f64]) -> Result<(f64, f64)> {
    if raw.is_empty() {
        return Err(Error::EmptyInput("restart errors"));
    }
    let n = raw.len() as f64;
    // Summing offsets from the first value keeps identical inputs exact.
    let mean = raw[0] + raw.iter().map(|e| e - raw[0]).sum::<f64>() / n;
    let var = raw.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

impl SweepReport {
    /// Groups `runs` of one method by sweep value, in order of appearance.
    pub fn from_runs(variable: &'static str, runs: &[RunRecord], method: Method) -> Self {
        let mut rows: Vec<SweepRow> = Vec::new();
        for r in runs.iter().filter(|r| r.method == method) {
            let row = match rows.iter_mut().position(|row| row.sweep_value == r.sweep_value) {
                Some(i) => &mut rows[i],
                None => {
                    rows.push(SweepRow {
                        sweep_value: r.sweep_value,
                        eps_u: None,
                        eps_k: None,
                        eps_u_raw: Vec::new(),
                        eps_k_raw: Vec::new(),
                        n_runs: 0,
                        n_failed: 0,
                        wall_time_s: 0.0,
                    });
                    rows.last_mut().expect("just pushed")
                }
            };
            row.n_runs += 1;
            match &r.outcome {
                Ok(m) => {
                    row.eps_u_raw.push(m.eps_u);
                    row.eps_k_raw.push(m.eps_k);
                    row.wall_time_s += m.wall_time_s;
                }
                Err(_) => row.n_failed += 1,
            }
        }
        for row in &mut rows {
            row.eps_u = compute_restart_stats(&row.eps_u_raw).ok();
            row.eps_k = compute_restart_stats(&row.eps_k_raw).ok();
        }
        Self { variable, rows }
    }

    /// Aggregate table; means and deviations over failed-out rows are `nan`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_CSV_HEADER}\n");
        let pair = |s: Option<(f64, f64)>| match s {
            Some((m, sd)) => format!("{m:.17e},{sd:.17e}"),
            None => "nan,nan".to_string(),
        };
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.sweep_value,
                pair(r.eps_u),
                pair(r.eps_k),
                r.n_runs,
                r.n_failed
            )
            .expect("writing to a String cannot fail");
        }
        out
    }
}

/// Everything a study produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub pinn: SweepReport,
    /// MAP rows of the comparison study.
    pub map: Option<SweepReport>,
    pub reference: Option<Reference>,
}

impl ExperimentOutput {
    /// Per-run table, in run-index order.
    pub fn runs_csv(&self) -> String {
        let mut out = format!("{RUNS_CSV_HEADER}\n");
        for r in &self.runs {
            let tail = match &r.outcome {
                Ok(m) => format!(
                    "ok,{:.17e},{:.17e},{},{:.17e},{}",
                    m.eps_u, m.eps_k, m.iterations, m.final_objective, m.termination
                ),
                Err(e) => format!("failed,nan,nan,0,nan,\"{}\"", e.replace('"', "'")),
            };
            writeln!(out, "{},{},{},{},{tail}", r.sweep_value, r.method.name(), r.run, r.seed)
                .expect("writing to a String cannot fail");
        }
        out
    }

    /// Writes the tables, the resolved configuration, the reference fields
    /// and the estimated fields of every successful run into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("runs"))?;
        std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&self.config)?)?;
        std::fs::write(dir.join("sweep.csv"), self.pinn.to_csv())?;
        if let Some(map) = &self.map {
            std::fs::write(dir.join("sweep_map.csv"), map.to_csv())?;
        }
        std::fs::write(dir.join("runs.csv"), self.runs_csv())?;
        if let Some(r) = &self.reference {
            r.u.save(dir.join("reference_u.txt"))?;
            r.k.save(dir.join("reference_k.txt"))?;
        }
        for r in &self.runs {
            if let Ok(m) = &r.outcome {
                let path = |suffix: &str| dir.join("runs").join(format!("{:04}_{}_{suffix}", r.run, r.method.name()));
                m.u_hat.save(path("u.txt"))?;
                m.k_hat.save(path("k.txt"))?;
                std::fs::write(path("history.csv"), &m.history_csv)?;
                if let Some(curve) = &m.k_curve_csv {
                    std::fs::write(path("k_curve.csv"), curve)?;
                }
            }
        }
        Ok(())
    }
}

/// Trains one PINN from initialization `seed` and scores it.
pub fn run_pinn(setup: &ProblemSetup, seed: u64, lbfgs: &LbfgsConfig) -> Result<RunMetrics> {
    let start = Instant::now();
    let model = setup.model(seed)?;
    let out = train(&setup.problem, model, lbfgs)?;
    let errors = setup.evaluate(&out.model)?;
    let k_curve_csv = match (setup.config.kind, &setup.reference) {
        (ProblemKind::Nonlinear, Some(reference)) => {
            let (lo, hi) = (reference.u.min(), reference.u.max());
            let n = 200;
            let states: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
            let curve = setup.k_curve(&out.model, &states);
            let mut csv = String::from("u,K_ref,K_hat\n");
            for (u, k) in states.iter().zip(&curve) {
                writeln!(csv, "{u:.17e},{:.17e},{k:.17e}", setup.config.vg.conductivity(*u))
                    .expect("writing to a String cannot fail");
            }
            Some(csv)
        }
        _ => None,
    };
    Ok(RunMetrics {
        eps_u: errors.eps_u,
        eps_k: errors.eps_k,
        iterations: out.report.iterations,
        final_objective: out.report.final_loss(),
        termination: out.report.termination.to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        u_hat: setup.predict_u(&out.model),
        k_hat: setup.predict_k(&out.model),
        history_csv: out.report.to_csv(),
        k_curve_csv,
    })
}

/// MAP estimate from the measurements of a linear setup, scored like a PINN.
/// The state error uses the forward solve at the estimate.
pub fn run_map(setup: &ProblemSetup, config: &MapConfig) -> Result<RunMetrics> {
    let start = Instant::now();
    let reference = setup
        .reference
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("MAP scoring needs reference fields".into()))?;
    let bc = setup.config.boundary();
    let est = map_estimate(setup.grid, &setup.observed_u, &setup.observed_k, &bc, config)?;
    let u_hat = crate::synth::fv_solve_linear(&est.k, &bc)?;
    Ok(RunMetrics {
        eps_u: relative_error(&u_hat, &reference.u)?,
        eps_k: relative_error(&est.k, &reference.k)?,
        iterations: est.report.objectives.len() - 1,
        final_objective: *est.report.objectives.last().expect("at least the initial objective"),
        termination: format!("{:?}", est.report.termination).to_lowercase(),
        wall_time_s: start.elapsed().as_secs_f64(),
        u_hat,
        k_hat: est.k,
        history_csv: est.report.to_csv(),
        k_curve_csv: None,
    })
}

/// One isolated unit of work.
#[derive(Debug, Clone)]
struct Job {
    sweep_value: f64,
    method: Method,
    run: usize,
    seed: u64,
    problem: ProblemConfig,
}

fn build_setup(cfg: &ProblemConfig) -> Result<ProblemSetup> {
    match cfg.kind {
        ProblemKind::Linear => build_linear_problem(cfg),
        ProblemKind::Nonlinear => build_nonlinear_problem(cfg),
    }
}

fn execute(job: &Job, cfg: &ExperimentConfig) -> RunRecord {
    let outcome = build_setup(&job.problem)
        .and_then(|setup| match job.method {
            Method::Pinn => run_pinn(&setup, job.seed, &cfg.lbfgs),
            Method::Map => run_map(&setup, &cfg.map),
        })
        .map_err(|e| e.to_string());
    RunRecord {
        sweep_value: job.sweep_value,
        method: job.method,
        run: job.run,
        seed: job.seed,
        outcome,
    }
}

/// Expands the study into jobs. Run `k` uses seed `master + k`; MAP runs
/// share the seed (and hence the data) of their paired PINN run.
fn plan(cfg: &ExperimentConfig) -> Vec<Job> {
    let master = cfg.master_seed;
    let mut jobs: Vec<Job> = Vec::new();
    let mut runs = 0usize;
    let mut push = |jobs: &mut Vec<Job>, sweep_value: f64, problem: ProblemConfig| {
        let run = runs;
        runs += 1;
        jobs.push(Job {
            sweep_value,
            method: Method::Pinn,
            run,
            seed: master.wrapping_add(run as u64),
            problem,
        });
    };
    let base = &cfg.problem;
    match cfg.kind {
        ExperimentKind::SingleRun => push(&mut jobs, base.n_c as f64, base.clone()),
        ExperimentKind::RestartStudy => {
            // Measurement and collocation sets stay fixed; only the
            // initialization changes.
            for _ in 0..cfg.restarts {
                push(&mut jobs, base.n_c as f64, base.clone());
            }
        }
        ExperimentKind::CollocationSweep | ExperimentKind::NkSweep | ExperimentKind::NuSweep => {
            let mut run = 0u64;
            for value in cfg.sweep_values() {
                for _ in 0..cfg.restarts {
                    let seed = master.wrapping_add(run);
                    run += 1;
                    let mut p = base.clone();
                    match cfg.kind {
                        ExperimentKind::CollocationSweep => p.n_c = value,
                        ExperimentKind::NkSweep => {
                            p.n_k = Some(value);
                            p.n_u = cfg.fixed_count;
                            p.measurement_seed = seed;
                        }
                        _ => {
                            p.n_u = value;
                            p.n_k = Some(cfg.fixed_count);
                            p.measurement_seed = seed;
                        }
                    }
                    p.collocation_seed = seed;
                    push(&mut jobs, value as f64, p);
                }
            }
        }
        ExperimentKind::MapVsPinn => {
            let mut run = 0u64;
            for value in cfg.sweep_values() {
                for _ in 0..cfg.restarts {
                    let seed = master.wrapping_add(run);
                    run += 1;
                    let mut p = base.clone();
                    p.n_k = Some(value);
                    p.n_u = value;
                    p.measurement_seed = seed;
                    p.collocation_seed = seed;
                    p.noise_seed = seed;
                    push(&mut jobs, value as f64, p);
                    let paired = Job {
                        method: Method::Map,
                        ..jobs[jobs.len() - 1].clone()
                    };
                    jobs.push(paired);
                }
            }
        }
        ExperimentKind::Nonlinear | ExperimentKind::NonlinearNoisy => {
            let levels = if cfg.kind == ExperimentKind::Nonlinear {
                vec![base.noise.level]
            } else {
                vec![0.0, cfg.noise_level]
            };
            for level in levels {
                for _ in 0..cfg.restarts {
                    let mut p = base.clone();
                    p.noise.level = level;
                    push(&mut jobs, level, p);
                }
            }
        }
    }
    jobs
}

/// Runs the study on `threads` workers (1 runs sequentially). Results are
/// ordered by run index whatever the completion order.
pub fn run_experiment(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let jobs = plan(cfg);
    let runs = dispatch(&jobs, cfg, threads)?;
    let variable = cfg.kind.sweep_variable();
    let pinn = SweepReport::from_runs(variable, &runs, Method::Pinn);
    let map = (cfg.kind == ExperimentKind::MapVsPinn).then(|| SweepReport::from_runs(variable, &runs, Method::Map));
    let reference = crate::problem::reference_fields(&cfg.problem).ok();
    Ok(ExperimentOutput {
        config: cfg.clone(),
        runs,
        pinn,
        map,
        reference,
    })
}

#[cfg(feature = "parallel")]
fn dispatch(jobs: &[Job], cfg: &ExperimentConfig, threads: usize) -> Result<Vec<RunRecord>> {
    use rayon::prelude::*;
    if threads <= 1 {
        return Ok(jobs.iter().map(|j| execute(j, cfg)).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(|j| execute(j, cfg)).collect()))
}

#[cfg(not(feature = "parallel"))]
fn dispatch(jobs: &[Job], cfg: &ExperimentConfig, _threads: usize) -> Result<Vec<RunRecord>> {
    Ok(jobs.iter().map(|j| execute(j, cfg)).collect())
}
