mod common;

use std::sync::OnceLock;

use common::Lab;
use nls_fgr::ground_state::{
    amplitude_law, branch_point, build_branch, cached_branch, predicted_delta, profile_residual, solve_ground_state,
    GroundStateBranch, PROFILE_TOL,
};
use nls_fgr::evolution::linear_fit;
use proptest::prelude::*;

fn lab() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(Lab::small)
}

fn branch() -> &'static GroundStateBranch {
    static BRANCH: OnceLock<GroundStateBranch> = OnceLock::new();
    BRANCH.get_or_init(|| {
        let l = lab();
        let lams: Vec<f64> = (0..7).map(|i| 1.75 + 0.05 * i as f64).collect();
        build_branch(&l.pot, &l.spec, 1.0, &lams).unwrap()
    })
}

fn l2(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() * lab().grid.cell_volume()).sqrt()
}

#[test]
fn profile_solves_the_stationary_equation() {
    let l = lab();
    let p = branch_point(&l.pot, &l.spec, 1.8, 1.0).unwrap();
    assert!(p.profile.residual < PROFILE_TOL);
    assert!(l2(&profile_residual(&l.pot, 1.8, 1.0, p.phi())) < PROFILE_TOL);
    let peak = p.phi().iter().cloned().fold(f64::MIN, f64::max);
    assert!(p.phi().iter().all(|v| *v > -1e-12 * peak), "profile must be positive");
}

#[test]
fn bifurcation_amplitude_follows_square_root_law() {
    let l = lab();
    let eps = [1e-4, 3e-4, 1e-3, 3e-3];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for e in eps {
        let lam = -l.spec.e0() + e;
        let p = branch_point(&l.pot, &l.spec, lam, 1.0).unwrap();
        let (measured, predicted) = amplitude_law(&p.profile, &l.spec);
        assert!((measured / predicted - 1.0).abs() < 0.05, "ε = {e}: {measured} vs {predicted}");
        x.push(e.ln());
        y.push(measured.ln());
    }
    let (slope, _) = linear_fit(&x, &y);
    assert!((slope - 0.5).abs() < 0.02, "slope {slope}");
}

#[test]
fn frequencies_below_the_bifurcation_are_rejected() {
    let l = lab();
    let init = l.spec.phi_lin().to_vec();
    assert!(solve_ground_state(&l.pot, &l.spec, 1.5, 1.0, &init).is_err());
    assert!(solve_ground_state(&l.pot, &l.spec, 1.8, 0.5, &init).is_err());
}

#[test]
fn lambda_derivative_matches_finite_difference() {
    let l = lab();
    let h = 1e-4;
    let c = branch_point(&l.pot, &l.spec, 1.8, 1.0).unwrap();
    let a = branch_point(&l.pot, &l.spec, 1.8 - h, 1.0).unwrap();
    let b = branch_point(&l.pot, &l.spec, 1.8 + h, 1.0).unwrap();
    let fd: Vec<f64> = a.phi().iter().zip(b.phi()).map(|(p, q)| (q - p) / (2.0 * h)).collect();
    let err: Vec<f64> = fd.iter().zip(&c.dphi).map(|(p, q)| p - q).collect();
    assert!(l2(&err) < 1e-5 * l2(&c.dphi));
    let fd_mass = (b.mass - a.mass) / (2.0 * h);
    assert!((fd_mass - c.dmass).abs() < 1e-6 * c.dmass.abs());
}

#[test]
fn branch_mass_is_monotone_and_invertible() {
    let b = branch();
    b.validate().unwrap();
    let rows = b.mass_curve().unwrap();
    assert!(rows.windows(2).all(|w| w[1].mass > w[0].mass));
    assert!(rows.iter().all(|r| r.dmass > 0.0));
    for r in &rows {
        assert!((b.mass_at(r.lambda).unwrap() - r.mass).abs() < 1e-12);
    }
    assert!(b.mass_at(1.5).is_err());
}

#[test]
fn interpolated_profile_converges_at_fourth_order() {
    let l = lab();
    let target = 1.8125;
    let direct = branch_point(&l.pot, &l.spec, target, 1.0).unwrap();
    let error = |h: f64| {
        let lams = [1.8125 - 0.5 * h, 1.8125 + 0.5 * h];
        let b = build_branch(&l.pot, &l.spec, 1.0, &lams).unwrap();
        let (phi, _) = b.interpolate(target).unwrap();
        let err: Vec<f64> = phi.iter().zip(direct.phi()).map(|(p, q)| p - q).collect();
        l2(&err) / l2(direct.phi())
    };
    let coarse = error(0.05);
    let fine = error(0.025);
    println!("interpolation error {coarse:e} -> {fine:e}");
    assert!(coarse < 1e-3);
    assert!(coarse / fine > 12.0 && coarse / fine < 20.0, "ratio {}", coarse / fine);
}

#[test]
fn cache_round_trip_and_corruption_rebuild() {
    let l = lab();
    let dir = tempfile::tempdir().unwrap();
    let lams = [1.75, 1.8, 1.85];
    let (first, hit) = cached_branch(dir.path(), &l.pot, &l.spec, 1.0, &lams).unwrap();
    assert!(!hit);
    let (again, hit) = cached_branch(dir.path(), &l.pot, &l.spec, 1.0, &lams).unwrap();
    assert!(hit);
    assert_eq!(first.lambdas(), again.lambdas());
    assert_eq!(first.points[1].phi(), again.points[1].phi());

    let bin = dir.path().join("phi_001.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid..mid + 8].copy_from_slice(&1.0f64.to_le_bytes());
    std::fs::write(&bin, bytes).unwrap();
    assert!(GroundStateBranch::load(dir.path(), &l.pot, 1.0).is_err());
    let (rebuilt, hit) = cached_branch(dir.path(), &l.pot, &l.spec, 1.0, &lams).unwrap();
    assert!(!hit);
    assert_eq!(rebuilt.points[1].phi(), first.points[1].phi());

    let (_, hit) = cached_branch(dir.path(), &l.pot, &l.spec, 1.0, &[1.75, 1.8]).unwrap();
    assert!(!hit, "a different λ list must not reuse the cache");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mass_inversion_round_trips(lambda in 1.75f64..2.05) {
        let b = branch();
        let m = b.mass_at(lambda).unwrap();
        let back = b.lambda_of_mass(m).unwrap();
        prop_assert!((back - lambda).abs() < 1e-10);
    }

    #[test]
    fn predicted_delta_grows_with_frequency(a in 1.6901f64..2.5, b in 1.6901f64..2.5) {
        let l = lab();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-6);
        prop_assert!(predicted_delta(&l.spec, lo, 1.0) < predicted_delta(&l.spec, hi, 1.0));
    }
}
