mod common;

use common::{Lab, NU};
use nls_fgr::grid::{Field, Grid};
use nls_fgr::linear_spectrum::{check_assumptions, check_levels, discrete_spectrum, project_continuous_lin};
use nls_fgr::potential::{Potential, PotentialSpec};
use proptest::prelude::*;

#[test]
fn poschl_teller_levels_match_closed_form() {
    let lab = Lab::small();
    let exact = PotentialSpec::PoschlTeller { nu: NU, width: 1.0 }.analytic_levels_1d().unwrap();
    assert_eq!(exact.len(), 2);
    for (e, x) in lab.spec.energies.iter().zip(&exact) {
        assert!((e - x).abs() < 1e-9, "{e} vs {x}");
    }
    assert!((lab.spec.e0() + 1.69).abs() < 1e-9);
    assert!((lab.spec.e1() + 0.09).abs() < 1e-9);
    assert!(lab.spec.residuals.iter().all(|r| *r < 1e-8));
    assert!(lab.spec.orthonormality_residual() < 1e-10);
}

#[test]
fn levels_are_stable_under_grid_doubling() {
    let coarse = Lab::new(512, 40.0);
    let fine = Lab::new(1024, 40.0);
    for (a, b) in coarse.spec.energies.iter().zip(&fine.spec.energies) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn trapped_pair_satisfies_resonance_hypotheses() {
    let lab = Lab::small();
    let rep = check_assumptions(&lab.spec);
    assert!(rep.passed(), "{:?}", rep.messages);
    assert!((rep.resonance_margin - (2.0 * -0.09 + 1.69)).abs() < 1e-8);
}

#[test]
fn shallow_well_is_refused_as_an_assumption_failure() {
    let grid = Grid::new(1, 512, 40.0).unwrap();
    let pot = Potential::new(PotentialSpec::GaussianWell { depth: 0.3, width: 1.0 }, &grid).unwrap();
    match discrete_spectrum(&pot, 2) {
        Err(nls_fgr::Error::Assumption(msg)) => assert!(msg.contains("insufficient bound states")),
        other => panic!("expected an assumption failure, got {other:?}"),
    }
    let flat = Potential::new(PotentialSpec::Zero, &grid).unwrap();
    assert!(matches!(discrete_spectrum(&flat, 2), Err(nls_fgr::Error::Assumption(_))));
}

#[test]
fn negative_resonance_margin_is_reported() {
    let rep = check_levels(&[-1.0, -0.8]);
    assert!(rep.two_levels);
    assert!(!rep.resonance_condition);
    assert!((rep.resonance_margin + 0.6).abs() < 1e-15);
}

#[test]
fn continuous_projection_annihilates_bound_states() {
    let lab = Lab::small();
    for j in 0..2 {
        let u = lab.spec.state_field(j);
        let p = project_continuous_lin(&u, &lab.spec).unwrap();
        assert!(p.norm() < 1e-10);
    }
    let f = Field::from_real_fn(&lab.grid, |x| (-(x[0] - 1.0).powi(2)).exp());
    let p = project_continuous_lin(&f, &lab.spec).unwrap();
    let twice = project_continuous_lin(&p, &lab.spec).unwrap();
    let diff = p.data().iter().zip(twice.data()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(diff < 1e-12);
}

#[test]
fn exported_entries_reference_state_files() {
    let lab = Lab::small();
    let rows = lab.spec.export();
    assert_eq!(rows.len(), lab.spec.energies.len());
    assert!(rows.iter().all(|r| !r.file_ref.is_empty()));
}

proptest! {
    #[test]
    fn level_check_agrees_with_its_definition(e0 in -3.0f64..-0.01, frac in 0.0f64..1.5) {
        let e1 = e0 * (1.0 - frac);
        let rep = check_levels(&[e0, e1]);
        let trapped = e0 < e1 && e1 < 0.0;
        prop_assert_eq!(rep.two_levels, trapped);
        prop_assert_eq!(rep.passed(), trapped && 2.0 * e1 - e0 > 0.0);
    }
}
