use nls_fgr::fgr::{FgrData, QuadraticTensor};
use nls_fgr::ground_state::MassRow;
use nls_fgr::reduced_ode::{
    envelopes, equipartition_invariant, integrate_reduced, predict_equipartition, scalar_closed_form, MassRate,
    ReducedModel, ReducedState,
};
use nls_fgr::C64;
use proptest::prelude::*;

const ENERGY: f64 = 1.6;

fn scalar_tensor(v: f64) -> QuadraticTensor {
    let mut t = QuadraticTensor::zeros(1);
    t.set(0, 0, 0, 0, C64::new(v, 0.0));
    t
}

fn synthetic_fgr(gamma_hat: f64, delta: f64) -> FgrData {
    FgrData {
        lambda: 2.0,
        sigma: 1.0,
        delta,
        phi_sup: delta,
        energies: vec![ENERGY],
        near_degenerate: false,
        z: scalar_tensor(gamma_hat),
        gamma: scalar_tensor(gamma_hat),
        lambda_form: QuadraticTensor::zeros(1),
        gamma0: scalar_tensor(gamma_hat),
        u_residual: 0.0,
        solves: Vec::new(),
        lbox: 100.0,
        n: 1024,
    }
}

/// N(λ) = λ², tabulated exactly (the cubic interpolant reproduces it).
fn quadratic_mass_curve() -> Vec<MassRow> {
    (0..9)
        .map(|i| {
            let lambda = 1.8 + 0.1 * i as f64;
            MassRow {
                lambda,
                mass: lambda * lambda,
                dmass: 2.0 * lambda,
            }
        })
        .collect()
}

fn model(gamma_hat: f64) -> ReducedModel {
    let m = ReducedModel {
        sigma: 1.0,
        mass_curve: quadratic_mass_curve(),
        fgr: vec![synthetic_fgr(gamma_hat, 0.3)],
        interpolate: false,
        mass_rate: MassRate::Gamma,
        use_gamma0_in_z: false,
    };
    m.validate().unwrap();
    m
}

fn start(z0: f64) -> ReducedState {
    ReducedState {
        t: 0.0,
        lambda: 2.0,
        z: vec![C64::new(z0, 0.0)],
    }
}

#[test]
fn scalar_decay_matches_closed_form() {
    let (g, z0) = (0.05, 0.4);
    let traj = integrate_reduced(&model(g), &start(z0), 200.0, 0.01, 100).unwrap();
    for p in &traj.points {
        let exact = scalar_closed_form(z0 * z0, g, p.t);
        assert!((p.z_norm_sq - exact).abs() < 1e-7 * exact, "t = {}", p.t);
    }
}

#[test]
fn mass_plus_half_norm_is_conserved() {
    let traj = integrate_reduced(&model(0.05), &start(0.4), 200.0, 0.01, 100).unwrap();
    let drift = equipartition_invariant(&traj);
    assert!(drift.iter().all(|d| d.abs() < 1e-8), "{:?}", drift.iter().cloned().fold(0.0, f64::max));
}

#[test]
fn soliton_frequency_tends_to_the_prediction() {
    let m = model(0.5);
    let s = start(0.4);
    let pred = predict_equipartition(&m, s.lambda, &s.z).unwrap();
    assert!((pred.lambda_inf - (4.0f64 + 0.08).sqrt()).abs() < 1e-12);
    assert!((pred.gain - 0.08).abs() < 1e-15);
    let traj = integrate_reduced(&m, &s, 4000.0, 0.02, 1000).unwrap();
    let last = traj.final_point();
    let expected = (pred.mass_inf - 0.5 * last.z_norm_sq).sqrt();
    assert!((last.lambda - expected).abs() < 1e-8);
    assert!((last.lambda - pred.lambda_inf).abs() < 1e-3);
    assert!(traj.lambda_at(1e9) == last.lambda);
    assert!(traj.lambda_at(-1.0) == traj.points[0].lambda);
}

#[test]
fn envelopes_bound_the_trajectory() {
    let g = 0.05;
    let m = model(g);
    let env = envelopes(&m.fgr[0], 0.4, 50, 3).unwrap();
    let expected = 2.0 * g / 0.3f64.powi(2);
    assert!((env.c_plus - expected).abs() < 1e-12 * expected);
    assert!((env.c_minus - expected).abs() < 1e-12 * expected);
    let traj = integrate_reduced(&m, &start(0.4), 500.0, 0.02, 50).unwrap();
    assert_eq!(env.band_violation(&traj), 0.0);
    assert!(env.upper(100.0) <= env.upper(0.0));
}

#[test]
fn coarse_steps_and_bad_inputs_are_rejected() {
    let m = model(0.05);
    assert!(integrate_reduced(&m, &start(0.4), 10.0, 0.5, 1).is_err());
    let bad = ReducedState {
        t: 0.0,
        lambda: 2.0,
        z: vec![C64::new(0.1, 0.0); 2],
    };
    assert!(integrate_reduced(&m, &bad, 10.0, 0.01, 1).is_err());
    let mut neg = model(0.05);
    neg.fgr = vec![synthetic_fgr(-0.05, 0.3)];
    assert!(matches!(neg.validate(), Err(nls_fgr::Error::Assumption(_))));
}

#[test]
fn trajectory_csv_has_one_column_pair_per_mode() {
    let traj = integrate_reduced(&model(0.05), &start(0.4), 1.0, 0.01, 10).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "t,lambda,mass,re_z1,im_z1,z_norm_sq,invariant_drift");
    assert_eq!(text.lines().count(), traj.points.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn closed_form_is_monotone(z0 in 0.01f64..1.0, g in 1e-4f64..1.0, t in 0.0f64..1e4, dt in 0.1f64..100.0) {
        prop_assert!(scalar_closed_form(z0 * z0, g, t + dt) < scalar_closed_form(z0 * z0, g, t));
        prop_assert!((scalar_closed_form(z0 * z0, g, 0.0) - z0 * z0).abs() < 1e-15);
    }

    #[test]
    fn invariant_holds_for_any_initial_phase(phase in 0.0f64..std::f64::consts::TAU, z0 in 0.05f64..0.5, g in 0.01f64..0.2) {
        let m = model(g);
        let s = ReducedState { t: 0.0, lambda: 2.0, z: vec![C64::from_polar(z0, phase)] };
        let traj = integrate_reduced(&m, &s, 20.0, 0.01, 500).unwrap();
        prop_assert!(traj.final_point().drift.abs() < 1e-9);
    }
}
