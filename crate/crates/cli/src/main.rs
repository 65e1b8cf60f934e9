//! `pidnn`: generate synthetic data, train PINNs, compute MAP estimates and
//! run studies from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use pidnn_core::experiment::{run_experiment, run_pinn, ExperimentConfig, ExperimentKind};
use pidnn_core::map::{map_estimate, MapConfig};
use pidnn_core::optim::LbfgsConfig;
use pidnn_core::problem::{
    observe, reference_fields, relative_error, Observations, ProblemConfig, ProblemSetup, Reference,
};
use pidnn_core::synth::BoundarySpec;
use pidnn_core::{Field, Grid2D};

#[derive(Parser, Debug)]
#[command(name = "pidnn", version, about = "Physics-informed networks for inverse diffusion problems")]
struct Cli {
    /// JSON configuration file for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override: measurement seed for generate-data, initialization
    /// seed for train, master seed for experiment.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Reference fields and point measurements from a problem configuration.
    GenerateData,
    /// Trains one PINN on generated or supplied measurements.
    Train {
        /// State measurements (`x y value` per line) instead of generated ones.
        #[arg(long, requires = "k_obs")]
        u_obs: Option<PathBuf>,
        #[arg(long, requires = "u_obs")]
        k_obs: Option<PathBuf>,
        /// Reference state field for scoring supplied measurements.
        #[arg(long, requires = "reference_k")]
        reference_u: Option<PathBuf>,
        #[arg(long, requires = "reference_u")]
        reference_k: Option<PathBuf>,
    },
    /// Regularized least-squares estimate of the conductivity field.
    MapEstimate {
        #[arg(long)]
        gamma_reg: Option<f64>,
        #[arg(long)]
        u_obs: PathBuf,
        #[arg(long)]
        k_obs: Option<PathBuf>,
        /// Grid as JSON: `{"nx":32,"ny":32,"lx":1.0,"ly":1.0}`.
        #[arg(long)]
        grid: PathBuf,
        /// Estimated conductivity field.
        #[arg(long)]
        k_out: PathBuf,
        /// Objective after every accepted step.
        #[arg(long)]
        objective_csv: Option<PathBuf>,
    },
    /// Runs a restart study, a sweep, the MAP comparison or the noise study.
    Experiment {
        /// Study to run with default settings when no configuration is given.
        #[arg(long)]
        kind: Option<Kind>,
    },
    /// Relative squared error of a field against a reference field.
    Metrics {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Kind {
    SingleRun,
    RestartStudy,
    CollocationSweep,
    #[value(name = "nK-sweep")]
    NkSweep,
    #[value(name = "nU-sweep")]
    NuSweep,
    MapVsPinn,
    Nonlinear,
    NonlinearNoisy,
}

impl From<Kind> for ExperimentKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::SingleRun => ExperimentKind::SingleRun,
            Kind::RestartStudy => ExperimentKind::RestartStudy,
            Kind::CollocationSweep => ExperimentKind::CollocationSweep,
            Kind::NkSweep => ExperimentKind::NkSweep,
            Kind::NuSweep => ExperimentKind::NuSweep,
            Kind::MapVsPinn => ExperimentKind::MapVsPinn,
            Kind::Nonlinear => ExperimentKind::Nonlinear,
            Kind::NonlinearNoisy => ExperimentKind::NonlinearNoisy,
        }
    }
}

/// Configuration of the `train` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainConfig {
    problem: ProblemConfig,
    lbfgs: LbfgsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::default(),
            lbfgs: ExperimentConfig::default().lbfgs,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn generate_data(cli: &Cli) -> Result<serde_json::Value> {
    let mut cfg: ProblemConfig = read_json(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.measurement_seed = s;
    }
    cfg.validate()?;
    let reference = reference_fields(&cfg)?;
    let (k_obs, u_obs) = observe(&cfg, &reference)?;
    let out = &cli.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("problem.json"), serde_json::to_string_pretty(&cfg)?)?;
    std::fs::write(out.join("grid.json"), serde_json::to_string_pretty(&cfg.grid())?)?;
    reference.u.save(out.join("reference_u.txt"))?;
    reference.k.save(out.join("reference_k.txt"))?;
    u_obs.save(out.join("u_obs.txt"))?;
    k_obs.save(out.join("k_obs.txt"))?;
    Ok(json!({"n_u": u_obs.len(), "n_k": k_obs.len(), "cells": cfg.grid().n_cells()}))
}

fn train_cmd(
    cli: &Cli,
    u_obs: Option<&Path>,
    k_obs: Option<&Path>,
    reference_u: Option<&Path>,
    reference_k: Option<&Path>,
) -> Result<serde_json::Value> {
    let cfg: TrainConfig = read_json(cli.config.as_deref())?;
    let seed = cli.seed.unwrap_or(0);
    let setup = match (u_obs, k_obs) {
        (Some(u), Some(k)) => {
            let reference = match (reference_u, reference_k) {
                (Some(u), Some(k)) => Some(Reference {
                    u: Field::load(u)?,
                    k: Field::load(k)?,
                }),
                _ => None,
            };
            ProblemSetup::from_observations(&cfg.problem, Observations::load(k)?, Observations::load(u)?, reference)?
        }
        _ => {
            let reference = reference_fields(&cfg.problem)?;
            let (k, u) = observe(&cfg.problem, &reference)?;
            ProblemSetup::from_observations(&cfg.problem, k, u, Some(reference))?
        }
    };
    let out = &cli.out;
    std::fs::create_dir_all(out)?;
    if setup.reference.is_some() {
        let m = run_pinn(&setup, seed, &cfg.lbfgs)?;
        m.u_hat.save(out.join("u_hat.txt"))?;
        m.k_hat.save(out.join("k_hat.txt"))?;
        std::fs::write(out.join("history.csv"), &m.history_csv)?;
        if let Some(curve) = &m.k_curve_csv {
            std::fs::write(out.join("k_curve.csv"), curve)?;
        }
        Ok(json!({
            "eps_u": m.eps_u,
            "eps_K": m.eps_k,
            "iterations": m.iterations,
            "final_loss": m.final_objective,
            "termination": m.termination,
        }))
    } else {
        let model = setup.model(seed)?;
        let trained = pidnn_core::problem::train(&setup.problem, model, &cfg.lbfgs)?;
        setup.predict_u(&trained.model).save(out.join("u_hat.txt"))?;
        setup.predict_k(&trained.model).save(out.join("k_hat.txt"))?;
        std::fs::write(out.join("history.csv"), trained.report.to_csv())?;
        Ok(json!({
            "iterations": trained.report.iterations,
            "final_loss": trained.report.final_loss(),
            "termination": trained.report.termination.to_string(),
        }))
    }
}

fn map_cmd(
    cli: &Cli,
    gamma_reg: Option<f64>,
    u_obs: &Path,
    k_obs: Option<&Path>,
    grid: &Path,
    k_out: &Path,
    objective_csv: Option<&Path>,
) -> Result<serde_json::Value> {
    let mut cfg: MapConfig = read_json(cli.config.as_deref())?;
    if let Some(g) = gamma_reg {
        cfg.gamma_reg = g;
    }
    let grid: Grid2D = serde_json::from_str(&std::fs::read_to_string(grid)?).context("parsing the grid file")?;
    let u = Observations::load(u_obs)?;
    let k = match k_obs {
        Some(p) => Observations::load(p)?,
        None => Observations::default(),
    };
    let est = map_estimate(grid, &u, &k, &BoundarySpec::linear_default(), &cfg)?;
    if let Some(parent) = k_out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    est.k.save(k_out)?;
    if let Some(p) = objective_csv {
        std::fs::write(p, est.report.to_csv())?;
    }
    Ok(json!({
        "objective": est.report.objectives.last(),
        "iterations": est.report.objectives.len() - 1,
        "termination": format!("{:?}", est.report.termination).to_lowercase(),
    }))
}

fn experiment_cmd(cli: &Cli, kind: Option<Kind>) -> Result<serde_json::Value> {
    let mut cfg = match (&cli.config, kind) {
        (Some(p), _) => ExperimentConfig::from_json(&std::fs::read_to_string(p)?)?,
        (None, Some(k)) => ExperimentConfig::for_kind(k.into()),
        (None, None) => bail!("experiment needs --config or --kind"),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    let out = run_experiment(&cfg, cli.threads)?;
    out.write(&cli.out)?;
    let failed: usize = out.pinn.rows.iter().map(|r| r.n_failed).sum();
    Ok(json!({"runs": out.runs.len(), "failed": failed}))
}

fn metrics_cmd(estimate: &Path, reference: &Path) -> Result<serde_json::Value> {
    let e = relative_error(&Field::load(estimate)?, &Field::load(reference)?)?;
    Ok(json!({"relative_error": e}))
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    match &cli.command {
        Command::GenerateData => generate_data(cli),
        Command::Train {
            u_obs,
            k_obs,
            reference_u,
            reference_k,
        } => train_cmd(
            cli,
            u_obs.as_deref(),
            k_obs.as_deref(),
            reference_u.as_deref(),
            reference_k.as_deref(),
        ),
        Command::MapEstimate {
            gamma_reg,
            u_obs,
            k_obs,
            grid,
            k_out,
            objective_csv,
        } => map_cmd(
            cli,
            *gamma_reg,
            u_obs,
            k_obs.as_deref(),
            grid,
            k_out,
            objective_csv.as_deref(),
        ),
        Command::Experiment { kind } => experiment_cmd(cli, *kind),
        Command::Metrics { estimate, reference } => metrics_cmd(estimate, reference),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", json!({"status": "error", "message": message.trim()}));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{}", json!({"status": "ok", "result": summary}));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"status": "error", "message": format!("{e:#}")}));
            ExitCode::FAILURE
        }
    }
}
