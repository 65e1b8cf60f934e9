use pidnn_web::{DarcyField, PinnFit, UnsaturatedFlow};

#[test]
fn darcy_field_has_bounded_monotone_pressure() {
    let f = DarcyField::new(16, 1.0, 0.15, 4).unwrap();
    assert_eq!(f.ln_k().len(), 256);
    let u = f.u();
    assert!(u.iter().all(|&v| (0.0..=1.0).contains(&v)));
    // Pressure falls from the bottom edge (u = 1) to the top edge (u = 0).
    let row_mean = |j: usize| u[j * 16..(j + 1) * 16].iter().sum::<f64>() / 16.0;
    assert!(row_mean(0) > row_mean(15));
    assert!(DarcyField::new(1, 1.0, 0.15, 0).is_err());
    assert!(DarcyField::new(8, -1.0, 0.15, 0).is_err());
}

#[test]
fn unsaturated_profile_falls_towards_the_fixed_head_edge() {
    let f = UnsaturatedFlow::new(0.1, 0.469, 0.1).unwrap();
    let h = f.head();
    assert_eq!(h.len(), f.x().len());
    // Water enters on the west edge and leaves through the east edge held at -10 m.
    assert!(h.windows(2).all(|w| w[1] < w[0]));
    assert!(h.iter().all(|&v| v > -10.0));
    let k = f.curve_k();
    assert!(k.windows(2).all(|w| w[1] >= w[0]));
    assert!((k.last().unwrap() - 1.0).abs() < 1e-12);
    assert!(UnsaturatedFlow::new(0.1, 1.5, 0.1).is_err());
}

#[test]
fn pinn_fit_lowers_the_loss_between_steps() {
    let mut fit = PinnFit::new(20, 40, 1).unwrap();
    let first = fit.step(10).unwrap();
    let second = fit.step(30).unwrap();
    assert!(second <= first);
    assert!(fit.iterations() > 10);
    assert_eq!(fit.k_hat().len(), fit.n() * fit.n());
    assert_eq!(fit.k_ref().len(), fit.n() * fit.n());
    assert_eq!(fit.k_points().len(), 40);
    let e = fit.errors().unwrap();
    assert!(e.iter().all(|v| v.is_finite()));
}
