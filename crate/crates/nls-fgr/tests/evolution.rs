mod common;

use common::Lab;
use nls_fgr::evolution::{
    fit_decay, initial_guess, linear_fit, measure_equipartition, residual_sources, synthesize_initial_data, track_run,
    Decomposer, EvolutionConfig, ModeTable, NoCorrections, Propagator, RunDiagnostics, Sample,
};
use nls_fgr::grid::{Field, Grid};
use nls_fgr::ground_state::build_branch;
use nls_fgr::C64;
use proptest::prelude::*;

fn closed(z0_sq: f64, g: f64, t: f64) -> f64 {
    1.0 / (1.0 / z0_sq + 2.0 * g * t)
}

fn sample(t: f64, lambda: f64, z_norm_sq: f64, soliton_mass: f64) -> Sample {
    Sample {
        t,
        lambda,
        gamma: 0.0,
        z: vec![[z_norm_sq.sqrt(), 0.0]],
        z_norm_sq,
        soliton_mass,
        mass: 0.0,
        absorbed: 0.0,
        budget_error: 0.0,
        r_l2: 0.0,
        r_weighted_h2: 0.0,
        r_sup: 0.0,
        r_weighted_l2: 0.0,
        r_tilde_weighted_l2: None,
        orthogonality: 0.0,
    }
}

/// Exact resonant decay with the lost |z|² handed to the soliton.
fn synthetic_run(z0: f64, g: f64, t_end: f64, count: usize) -> RunDiagnostics {
    let samples: Vec<Sample> = (0..=count)
        .map(|i| {
            let t = t_end * i as f64 / count as f64;
            let z2 = closed(z0 * z0, g, t);
            sample(t, 2.0, z2, 4.0 + 0.5 * (z0 * z0 - z2))
        })
        .collect();
    RunDiagnostics {
        lambda0: 2.0,
        z0: vec![[z0, 0.0]],
        initial_mass: 4.0 + z0 * z0,
        lambda_inf: 2.0,
        max_budget_error: 0.0,
        max_r_h2: 0.0,
        samples,
    }
}

#[test]
fn decay_fit_recovers_the_quartic_rate() {
    let (z0, g) = (0.3, 0.02);
    let fit = fit_decay(&synthetic_run(z0, g, 20000.0, 4000)).unwrap();
    assert!((fit.quartic_rate - 2.0 * g).abs() < 1e-9 * g);
    assert!((fit.exponent + 0.5).abs() < 1e-6, "{}", fit.exponent);
    assert!(fit.exponent_raw > -0.5 && fit.exponent_raw < 0.0);
    assert!(fit.points >= 8);
}

#[test]
fn decay_fit_needs_enough_samples() {
    assert!(fit_decay(&synthetic_run(0.3, 0.02, 1.0, 10)).is_err());
}

#[test]
fn sources_vanish_for_exact_resonant_decay() {
    let (z0, g) = (0.3, 0.02);
    let run = synthetic_run(z0, g, 20000.0, 20000);
    let (series, ints) = residual_sources(&run, |z| g * z.iter().map(|x| x.norm_sqr()).sum::<f64>().powi(2));
    assert_eq!(series.len(), run.samples.len() - 2);
    assert!(ints.ratio_lambda < 1e-4, "{}", ints.ratio_lambda);
    assert!(ints.ratio_z < 1e-4, "{}", ints.ratio_z);
}

#[test]
fn config_validation_catches_thin_sponges() {
    let grid = Grid::new(1, 64, 10.0).unwrap();
    let cfg = EvolutionConfig::default();
    assert!(cfg.validate(&grid).is_err());
    let zero_cadence = EvolutionConfig { cadence: 0, ..EvolutionConfig::default() };
    assert!(zero_cadence.validate(&Grid::new(1, 1024, 40.0).unwrap()).is_err());
    let bad_dt = EvolutionConfig { dt: 0.0, ..EvolutionConfig::default() };
    assert!(bad_dt.validate(&Grid::new(1, 1024, 40.0).unwrap()).is_err());
}

#[test]
fn split_step_conserves_mass_without_sponge() {
    let lab = Lab::small();
    let cfg = EvolutionConfig { sponge_strength: 0.0, dt: 0.01, ..EvolutionConfig::default() };
    let prop = Propagator::new(&lab.pot, 1.0, &cfg).unwrap();
    let f = Field::from_fn(&lab.grid, |x| C64::from_polar((-(x[0] * x[0])).exp(), 0.5 * x[0]));
    let mut psi = f.data().to_vec();
    let m0 = prop.mass(&psi);
    let e0 = prop.energy(&psi);
    for _ in 0..500 {
        prop.step(&mut psi);
    }
    assert!((prop.mass(&psi) - m0).abs() < 1e-12 * m0);
    assert!((prop.energy(&psi) - e0).abs() < 1e-3 * e0.abs());
}

#[test]
fn sponge_absorption_closes_the_mass_budget() {
    let lab = Lab::small();
    let cfg = EvolutionConfig { dt: 0.01, ..EvolutionConfig::default() };
    let prop = Propagator::linear(&lab.pot, &cfg).unwrap();
    let f = Field::from_fn(&lab.grid, |x| C64::from_polar((-(x[0] - 10.0).powi(2)).exp(), 3.0 * x[0]));
    let mut psi = f.data().to_vec();
    let m0 = prop.mass(&psi);
    let mut absorbed = 0.0;
    for _ in 0..2000 {
        absorbed += prop.step(&mut psi);
    }
    let m = prop.mass(&psi);
    assert!(m < 0.5 * m0, "the outgoing packet must be absorbed");
    assert!((m + absorbed - m0).abs() < 1e-10 * m0);
}

#[test]
fn ground_state_is_stationary_and_decomposes_trivially() {
    let lab = Lab::small();
    let lams: Vec<f64> = (0..5).map(|i| 1.78 + 0.02 * i as f64).collect();
    let branch = build_branch(&lab.pot, &lab.spec, 1.0, &lams).unwrap();
    let table = ModeTable::build(&lab.pot, &lab.spec, &branch).unwrap();
    let modes = table.at(1.82);
    let z0 = [C64::new(0.02, 0.0)];
    let (psi0, warning) = synthesize_initial_data(&branch, &modes, 1.82, 0.0, &[0.02], &[0.0], None, 0.5).unwrap();
    assert!(warning.is_none());
    let cfg = EvolutionConfig { t_end: 20.0, cadence: 40, ..EvolutionConfig::default() };
    let prop = Propagator::new(&lab.pot, 1.0, &cfg).unwrap();
    let dec = Decomposer::new(&branch, &table, &NoCorrections);
    let diag = track_run(&psi0, &cfg, &prop, &dec, initial_guess(1.82, 0.0, &z0, lab.grid.len()), 1.82, &z0).unwrap();
    assert!(diag.max_budget_error < 1e-10);
    for s in &diag.samples {
        assert!(s.orthogonality < 1e-8);
        assert!((s.lambda - 1.82).abs() < 1e-3);
        assert!((s.z_norm_sq.sqrt() - 0.02).abs() < 2e-3);
    }
    assert!(measure_equipartition(&diag, &branch).is_err(), "a short run cannot be measured");
}

proptest! {
    #[test]
    fn linear_fit_is_exact_on_lines(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 3usize..40) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.7 - 3.0).collect();
        let y: Vec<f64> = x.iter().map(|x| a * x + b).collect();
        let (s, c) = linear_fit(&x, &y);
        prop_assert!((s - a).abs() < 1e-10);
        prop_assert!((c - b).abs() < 1e-10);
    }
}
