use pidnn_core::experiment::{
    compute_restart_stats, run_experiment, ExperimentConfig, ExperimentKind, SWEEP_CSV_HEADER,
};
use pidnn_core::optim::LbfgsConfig;
use pidnn_core::problem::ProblemConfig;
use pidnn_core::Grid2D;

fn tiny(kind: ExperimentKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_kind(kind);
    let grid = if cfg.problem.kind == pidnn_core::problem::ProblemKind::Linear {
        Grid2D::unit_square(8)
    } else {
        Grid2D::new(8, 8, 10.0, 10.0).unwrap()
    };
    cfg.problem = ProblemConfig {
        grid: Some(grid),
        n_u: 10,
        n_c: 20,
        n_boundary: 4,
        hidden: vec![5, 5],
        n_k: if cfg.problem.kind == pidnn_core::problem::ProblemKind::Linear {
            Some(10)
        } else {
            None
        },
        ..cfg.problem
    };
    cfg.lbfgs = LbfgsConfig {
        max_iterations: 20,
        ..cfg.lbfgs
    };
    cfg.restarts = 2;
    cfg.fixed_count = 6;
    cfg
}

fn parse_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let mut cfg = tiny(ExperimentKind::CollocationSweep);
    cfg.sweep = Some(vec![0, 16]);
    let a = run_experiment(&cfg, 1).unwrap();
    let b = run_experiment(&cfg, 3).unwrap();
    assert_eq!(a.pinn.to_csv(), b.pinn.to_csv());
    assert_eq!(a.runs_csv(), b.runs_csv());
    let da = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    a.write(da.path()).unwrap();
    b.write(db.path()).unwrap();
    for name in ["sweep.csv", "runs.csv", "config.json", "runs/0003_pinn_k.txt", "runs/0000_pinn_history.csv"] {
        let x = std::fs::read(da.path().join(name)).unwrap();
        let y = std::fs::read(db.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn aggregates_are_recomputable_from_the_run_table() {
    let mut cfg = tiny(ExperimentKind::NuSweep);
    cfg.sweep = Some(vec![8, 12]);
    cfg.restarts = 3;
    let out = run_experiment(&cfg, 1).unwrap();
    let sweep = out.pinn.to_csv();
    assert!(sweep.starts_with(&format!("{SWEEP_CSV_HEADER}\n")));
    let runs = parse_rows(&out.runs_csv());
    assert_eq!(runs.len(), 6);
    for row in parse_rows(&sweep) {
        let eps_k: Vec<f64> = runs
            .iter()
            .filter(|r| r[0] == row[0] && r[4] == "ok")
            .map(|r| r[6].parse().unwrap())
            .collect();
        let (m, s) = compute_restart_stats(&eps_k).unwrap();
        let (rm, rs): (f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap());
        assert!((m - rm).abs() <= 1e-14 * m && (s - rs).abs() <= 1e-14 * m.max(1e-300));
        assert_eq!(row[5], "3");
        assert_eq!(row[6], "0");
    }
    for row in &out.pinn.rows {
        let mean = row.eps_u_raw.iter().sum::<f64>() / row.eps_u_raw.len() as f64;
        assert!((row.eps_u.unwrap().0 - mean).abs() <= 1e-14);
    }
    let seeds: Vec<&str> = runs.iter().map(|r| r[3].as_str()).collect();
    assert_eq!(seeds, ["0", "1", "2", "3", "4", "5"]);
}

#[test]
fn single_restart_has_zero_spread() {
    let mut cfg = tiny(ExperimentKind::RestartStudy);
    cfg.restarts = 1;
    cfg.master_seed = 42;
    let out = run_experiment(&cfg, 1).unwrap();
    let row = &out.pinn.rows[0];
    assert_eq!(row.eps_u.unwrap().1, 0.0);
    assert_eq!(row.eps_k.unwrap().1, 0.0);
    assert_eq!(out.runs[0].seed, 42);
}

#[test]
fn failed_runs_are_recorded_per_row() {
    let mut cfg = tiny(ExperimentKind::NuSweep);
    // More state measurements than cells cannot be drawn.
    cfg.sweep = Some(vec![8, 100]);
    cfg.restarts = 1;
    let out = run_experiment(&cfg, 1).unwrap();
    let rows = parse_rows(&out.pinn.to_csv());
    assert_eq!(rows[0][6], "0");
    assert_eq!(rows[1][5..], ["1".to_string(), "1".to_string()]);
    assert_eq!(rows[1][1], "nan");
    assert!(out.runs_csv().lines().nth(2).unwrap().contains(",failed,"));
}

#[test]
fn comparison_pairs_both_methods_on_the_same_data() {
    let mut cfg = tiny(ExperimentKind::MapVsPinn);
    cfg.sweep = Some(vec![12]);
    let out = run_experiment(&cfg, 1).unwrap();
    assert_eq!(out.runs.len(), 4);
    assert_eq!(out.runs[0].seed, out.runs[1].seed);
    let map = out.map.as_ref().unwrap();
    assert_eq!(map.rows[0].n_runs, 2);
    assert_eq!(map.rows[0].n_failed, 0);
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    assert!(dir.path().join("sweep_map.csv").exists());
    assert!(dir.path().join("runs/0001_map_k.txt").exists());
}

#[test]
fn noise_study_emits_one_row_per_level_with_curves() {
    let mut cfg = tiny(ExperimentKind::NonlinearNoisy);
    cfg.restarts = 1;
    let out = run_experiment(&cfg, 1).unwrap();
    let levels: Vec<f64> = out.pinn.rows.iter().map(|r| r.sweep_value).collect();
    assert_eq!(levels, vec![0.0, 0.01]);
    let m = out.runs[0].outcome.as_ref().unwrap();
    assert!(m.k_curve_csv.as_ref().unwrap().starts_with("u,K_ref,K_hat\n"));
}
