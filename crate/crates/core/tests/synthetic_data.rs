use pidnn_core::synth::{
    fv_solve_vangenuchten, sample_gp_lnk, BoundarySpec, GpConfig, GpSampler, PicardConfig, Tpfa,
    VanGenuchtenParams,
};
use pidnn_core::{Edge, Field, Grid2D};

fn gp_k_field(n: usize, seed: u64) -> Field {
    let g = Grid2D::unit_square(n);
    sample_gp_lnk(
        g,
        &GpConfig {
            seed,
            ..Default::default()
        },
    )
    .unwrap()
    .map(f64::exp)
}

#[test]
fn heterogeneous_solve_conserves_mass_in_every_cell() {
    let k = gp_k_field(32, 5);
    let op = Tpfa::harmonic(&k, &BoundarySpec::linear_default()).unwrap();
    let u = op.solve().unwrap();
    let through = op.edge_inflow(&u, Edge::South).abs();
    let worst = op
        .cell_imbalance(&u)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= 1e-10 * through, "imbalance {worst} vs flux {through}");
    let net: f64 = Edge::ALL.iter().map(|&e| op.edge_inflow(&u, e)).sum();
    assert!(net.abs() <= 1e-10 * through);
}

#[test]
fn heterogeneous_solve_obeys_the_maximum_principle() {
    let k = gp_k_field(32, 8);
    let op = Tpfa::harmonic(&k, &BoundarySpec::linear_default()).unwrap();
    let u = op.solve().unwrap();
    assert!(u.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn tpfa_matrix_is_symmetric_positive_definite() {
    let k = gp_k_field(8, 2);
    let a = Tpfa::harmonic(&k, &BoundarySpec::linear_default())
        .unwrap()
        .matrix();
    for i in 0..a.dim() {
        for j in 0..a.dim() {
            assert_eq!(a.get(i, j), a.get(j, i));
        }
    }
    assert!(a.cholesky().is_ok());
}

fn unsaturated_solution() -> (Grid2D, VanGenuchtenParams, Field, pidnn_core::synth::PicardReport) {
    let g = Grid2D::new(32, 32, 10.0, 10.0).unwrap();
    let vg = VanGenuchtenParams::default();
    let bc = BoundarySpec::unsaturated(vg.u0, vg.q);
    let (u, report) = fv_solve_vangenuchten(g, &vg, &bc, &PicardConfig::default()).unwrap();
    (g, vg, u, report)
}

#[test]
fn unsaturated_flux_is_conserved_through_every_cross_section() {
    let (g, vg, u, _) = unsaturated_solution();
    let bc = BoundarySpec::unsaturated(vg.u0, vg.q);
    let op = pidnn_core::synth::fv::vg_operator(g, &vg, &bc, &u.values);
    let fluxes = op.face_fluxes(&u.values);
    let expected = vg.q * g.ly;
    for i in 0..g.nx - 1 {
        let section: f64 = op
            .faces
            .iter()
            .zip(&fluxes)
            .filter(|(f, _)| f.axis == pidnn_core::grid::Axis::X && g.ij(f.lo).0 == i)
            .map(|(_, q)| q)
            .sum();
        assert!(
            (section - expected).abs() <= 1e-6 * expected,
            "section {i}: {section} vs {expected}"
        );
    }
    let out = -op.edge_inflow(&u.values, Edge::East);
    assert!((out - expected).abs() <= 1e-6 * expected);
}

#[test]
fn unsaturated_solution_is_uniform_across_the_flow() {
    let (g, _, u, _) = unsaturated_solution();
    for i in 0..g.nx {
        let col: Vec<f64> = (0..g.ny).map(|j| u.get(i, j)).collect();
        let spread = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - col.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread <= 1e-8, "column {i} varies by {spread}");
    }
    // Flow runs from the influx edge towards the fixed-pressure edge.
    assert!(u.get(0, 0) > u.get(g.nx - 1, 0));
}

#[test]
fn picard_residual_decreases_after_the_start_up_phase() {
    let (_, _, _, report) = unsaturated_solution();
    let r = &report.residual_norms;
    assert!(r.len() > 6);
    for k in 5..r.len() - 1 {
        assert!(r[k + 1] < r[k], "residual rose at iteration {k}: {} -> {}", r[k], r[k + 1]);
    }
}

#[test]
fn gp_statistics_match_the_covariance_model() {
    let g = Grid2D::unit_square(32);
    let sampler = GpSampler::new(g, 1.0, 0.15).unwrap();
    let draws: Vec<Field> = (0..200).map(|s| sampler.sample(1000 + s)).collect();
    let n = draws.len() as f64;
    let mean: Vec<f64> = (0..g.n_cells())
        .map(|c| draws.iter().map(|d| d.values[c]).sum::<f64>() / n)
        .collect();
    let vars: Vec<f64> = (0..g.n_cells())
        .map(|c| draws.iter().map(|d| (d.values[c] - mean[c]).powi(2)).sum::<f64>() / n)
        .collect();
    // Each pointwise estimate has standard deviation ~0.1 at 200 draws, so the
    // check is on the field average and on the bulk of the cells.
    let avg = vars.iter().sum::<f64>() / vars.len() as f64;
    assert!((0.9..=1.1).contains(&avg), "average variance {avg}");
    let inside = vars.iter().filter(|v| (0.7..=1.3).contains(*v)).count();
    assert!(inside as f64 >= 0.95 * vars.len() as f64, "{inside} cells inside [0.7, 1.3]");
    // Centroid pairs 5 cells apart (distance 0.15625, closest to 0.15).
    let offsets = [(5i64, 0i64), (0, 5), (3, 4), (4, 3)];
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for j in 0..32i64 {
        for i in 0..32i64 {
            for (di, dj) in offsets {
                let (i2, j2) = (i + di, j + dj);
                if i2 >= 32 || j2 >= 32 {
                    continue;
                }
                let a = g.index(i as usize, j as usize);
                let b = g.index(i2 as usize, j2 as usize);
                for d in &draws {
                    let (x, y) = (d.values[a] - mean[a], d.values[b] - mean[b]);
                    sab += x * y;
                    saa += x * x;
                    sbb += y * y;
                }
            }
        }
    }
    let corr = sab / (saa * sbb).sqrt();
    let target = (-0.5f64).exp();
    assert!((corr - target).abs() <= 0.12, "correlation {corr}");
}
