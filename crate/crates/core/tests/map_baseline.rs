use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use pidnn_core::map::{
    adjoint_gradient, discrete_gradient_operator, map_estimate, LeastSquaresModel, LeastSquaresProblem, MapConfig,
    MapData, MapProblem,
};
use pidnn_core::problem::Observations;
use pidnn_core::synth::{fv_solve_linear, sample_gp_lnk, BoundarySpec, GpConfig};
use pidnn_core::{Field, Grid2D};

fn gp_k(grid: Grid2D, seed: u64) -> Field {
    sample_gp_lnk(
        grid,
        &GpConfig {
            seed,
            ..Default::default()
        },
    )
    .unwrap()
    .map(f64::exp)
}

fn observe(field: &Field, cells: &[usize]) -> Observations {
    Observations::new(
        cells.iter().map(|&c| field.grid.centroid(c)).collect(),
        cells.iter().map(|&c| field.values[c]).collect(),
    )
    .unwrap()
}

#[test]
fn adjoint_gradient_matches_finite_differences() {
    let g = Grid2D::unit_square(8);
    let bc = BoundarySpec::linear_default();
    let truth = gp_k(g, 11);
    let u = fv_solve_linear(&truth, &bc).unwrap();
    let data = MapData::new(&g, &observe(&u, &[3, 17, 30, 41, 58]), &observe(&truth, &[5, 22, 63])).unwrap();
    let k = gp_k(g, 12);
    let gamma = 1e-6;
    let ag = adjoint_gradient(&k, &bc, &data, gamma).unwrap();
    assert_eq!(ag.solves, 2);
    let h = 1e-6;
    let ln_k: Vec<f64> = k.values.iter().map(|v| v.ln()).collect();
    let objective = |x: &[f64]| {
        let f = Field::new(g, x.iter().map(|v| v.exp()).collect()).unwrap();
        adjoint_gradient(&f, &bc, &data, gamma).unwrap().objective
    };
    for c in 0..g.n_cells() {
        let mut x = ln_k.clone();
        x[c] += h;
        let fp = objective(&x);
        x[c] -= 2.0 * h;
        let fm = objective(&x);
        let fd = (fp - fm) / (2.0 * h);
        let a = ag.gradient[c];
        if a.abs() > 1e-10 {
            assert!((fd - a).abs() <= 1e-5 * a.abs().max(1e-4), "cell {c}: {a} vs {fd}");
        }
    }
}

#[test]
fn zero_misfit_has_zero_data_gradient() {
    let g = Grid2D::unit_square(8);
    let bc = BoundarySpec::linear_default();
    let k = gp_k(g, 4);
    let u = fv_solve_linear(&k, &bc).unwrap();
    let all: Vec<usize> = (0..g.n_cells()).step_by(3).collect();
    let data = MapData::new(&g, &observe(&u, &all), &Observations::default()).unwrap();
    let ag = adjoint_gradient(&k, &bc, &data, 0.0).unwrap();
    let norm = ag.gradient.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm <= 1e-10, "{norm}");
}

#[test]
fn fully_observed_conductivity_is_reproduced() {
    let g = Grid2D::unit_square(6);
    let bc = BoundarySpec::linear_default();
    let truth = gp_k(g, 2);
    let u = fv_solve_linear(&truth, &bc).unwrap();
    let all: Vec<usize> = (0..g.n_cells()).collect();
    let cfg = MapConfig {
        gamma_reg: 0.0,
        ..Default::default()
    };
    let est = map_estimate(g, &observe(&u, &[4, 9, 20]), &observe(&truth, &all), &bc, &cfg).unwrap();
    for (a, b) in est.k.values.iter().zip(&truth.values) {
        assert!((a - b).abs() <= 1e-8 * b, "{a} vs {b}");
    }
}

#[test]
fn dominant_regularizer_flattens_the_estimate() {
    let g = Grid2D::unit_square(8);
    let bc = BoundarySpec::linear_default();
    let truth = gp_k(g, 3);
    let u = fv_solve_linear(&truth, &bc).unwrap();
    let (uo, ko) = (observe(&u, &[1, 21, 55]), observe(&truth, &[0, 16, 63]));
    let roughness = |gamma: f64| {
        let cfg = MapConfig {
            gamma_reg: gamma,
            ..Default::default()
        };
        let est = map_estimate(g, &uo, &ko, &bc, &cfg).unwrap();
        let ln_k: Vec<f64> = est.k.values.iter().map(|v| v.ln()).collect();
        let lk = discrete_gradient_operator(&g).apply(&ln_k);
        lk.iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    let r3 = roughness(1e3);
    assert!(r3 <= 1e-4, "{r3}");
    // In the penalty-dominated limit the optimum satisfies gamma L^T L x = O(1).
    let r4 = roughness(1e4);
    assert!((r3 / r4 - 10.0).abs() < 0.1, "{r3} {r4}");
}

#[test]
fn accepted_objectives_strictly_decrease_and_order_does_not_matter() {
    let g = Grid2D::unit_square(8);
    let bc = BoundarySpec::linear_default();
    let truth = gp_k(g, 6);
    let u = fv_solve_linear(&truth, &bc).unwrap();
    let uo = observe(&u, &[2, 9, 33, 40, 51, 60]);
    let ko = observe(&truth, &[7, 19, 44]);
    let cfg = MapConfig::default();
    let a = map_estimate(g, &uo, &ko, &bc, &cfg).unwrap();
    assert!(a.report.objectives.windows(2).all(|w| w[1] < w[0]));
    assert!(a.report.objectives.len() > 2);
    let rev = |o: &Observations| {
        Observations::new(
            o.points.iter().rev().cloned().collect(),
            o.values.iter().rev().cloned().collect(),
        )
        .unwrap()
    };
    let b = map_estimate(g, &rev(&uo), &rev(&ko), &bc, &cfg).unwrap();
    assert_eq!(a.k.values, b.k.values);
}

#[test]
fn woodbury_step_matches_the_dense_normal_equations() {
    let g = Grid2D::unit_square(4);
    let bc = BoundarySpec::linear_default();
    let truth = gp_k(g, 9);
    let u = fv_solve_linear(&truth, &bc).unwrap();
    let data = MapData::new(&g, &observe(&u, &[1, 6, 11]), &observe(&truth, &[3, 12])).unwrap();
    let mut p = MapProblem::new(g, &bc, &data, 1e-2);
    let x = vec![0.2; 16];
    let r = p.residual(&x).unwrap();
    let model = p.linearize(&x, &r).unwrap();
    let damping = 1e-3;
    let n = model.normal_matrix() + DMatrix::identity(16, 16) * damping;
    let dense = n.cholesky().unwrap().solve(&DVector::from_column_slice(model.jtr()));
    let step = model.step(damping).unwrap();
    for (a, b) in step.iter().zip(dense.iter()) {
        assert!((a + b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {}", -b);
    }
}

/// Closed-form TPFA on the 2 x 2 unit square with `u = 1` below, `u = 0`
/// above and no flow through the sides. Cells are numbered row by row.
fn solve_two_by_two(ln_k: &[f64; 4]) -> Vector4<f64> {
    let k = ln_k.map(f64::exp);
    let h = |a: f64, b: f64| 2.0 * a * b / (a + b);
    // Face length 0.5, centroid spacing 0.5; boundary half-distance 0.25.
    let tx0 = h(k[0], k[1]);
    let tx1 = h(k[2], k[3]);
    let ty0 = h(k[0], k[2]);
    let ty1 = h(k[1], k[3]);
    let tb: Vec<f64> = k.iter().map(|v| 2.0 * v).collect();
    let a = Matrix4::new(
        tx0 + ty0 + tb[0], -tx0, -ty0, 0.0,
        -tx0, tx0 + ty1 + tb[1], 0.0, -ty1,
        -ty0, 0.0, tx1 + ty0 + tb[2], -tx1,
        0.0, -ty1, -tx1, tx1 + ty1 + tb[3],
    );
    let b = Vector4::new(tb[0], tb[1], 0.0, 0.0);
    a.lu().solve(&b).unwrap()
}

#[test]
fn two_by_two_estimate_matches_exhaustive_search() {
    let g = Grid2D::unit_square(2);
    let bc = BoundarySpec::linear_default();
    let truth_ln = [0.4, -0.8, 1.1, -0.3];
    let truth = Field::new(g, truth_ln.iter().map(|v: &f64| v.exp()).collect()).unwrap();
    let u = fv_solve_linear(&truth, &bc).unwrap();
    let closed = solve_two_by_two(&truth_ln);
    for c in 0..4 {
        assert!((closed[c] - u.values[c]).abs() < 1e-14);
    }
    let (u_cells, k_cell) = ([0usize, 3usize], 1usize);
    let gamma = 1e-2;
    let cfg = MapConfig {
        gamma_reg: gamma,
        ..Default::default()
    };
    let est = map_estimate(g, &observe(&u, &u_cells), &observe(&truth, &[k_cell]), &bc, &cfg).unwrap();
    let map_ln: Vec<f64> = est.k.values.iter().map(|v| v.ln()).collect();

    let objective = |x: &[f64; 4]| {
        let us = solve_two_by_two(x);
        let mut f = 0.0;
        for &c in &u_cells {
            f += (us[c] - u.values[c]).powi(2);
        }
        f += (x[k_cell] - truth_ln[k_cell]).powi(2);
        // Face differences over a centroid spacing of 0.5.
        for (lo, hi) in [(0, 1), (2, 3), (0, 2), (1, 3)] {
            f += gamma * ((x[hi] - x[lo]) / 0.5).powi(2);
        }
        f
    };
    let search = |centre: [f64; 4], half: i64, step: f64| {
        let mut best = (f64::INFINITY, centre);
        for a in -half..=half {
            for b in -half..=half {
                for c in -half..=half {
                    for d in -half..=half {
                        let x = [
                            centre[0] + a as f64 * step,
                            centre[1] + b as f64 * step,
                            centre[2] + c as f64 * step,
                            centre[3] + d as f64 * step,
                        ];
                        if x.iter().any(|v| v.abs() > 3.0 + 1e-9) {
                            continue;
                        }
                        let f = objective(&x);
                        if f < best.0 {
                            best = (f, x);
                        }
                    }
                }
            }
        }
        best
    };
    let (_, coarse) = search([0.0; 4], 30, 0.1);
    let (f_grid, fine) = search(coarse, 10, 0.01);
    for c in 0..4 {
        assert!((map_ln[c] - fine[c]).abs() <= 0.01, "cell {c}: {} vs {}", map_ln[c], fine[c]);
    }
    let x_map = [map_ln[0], map_ln[1], map_ln[2], map_ln[3]];
    assert!(objective(&x_map) <= f_grid);
}
