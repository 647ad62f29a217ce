mod common;

use std::sync::OnceLock;

use common::{Lab, Point};
use nls_fgr::fgr::{
    aligned_linear_modes, certify_positivity, h22_identity_check, random_z, self_adjoint_bracket, FgrData,
    LeadingInputs, QuadraticTensor, DYNAMIC_SCALE,
};
use nls_fgr::resolvent::{plemelj_check, u_diagonalization_residual, ResolventConfig};
use nls_fgr::C64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lab() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(Lab::small)
}

fn at(lambda: f64) -> (Point, FgrData) {
    let p = lab().point(lambda);
    let d = p.fgr(lab());
    (p, d)
}

fn mid() -> &'static (Point, FgrData) {
    static M: OnceLock<(Point, FgrData)> = OnceLock::new();
    M.get_or_init(|| at(1.74))
}

#[test]
fn fgr_form_is_strictly_positive() {
    let (_, d) = mid();
    let cert = certify_positivity(d, 64, 7).unwrap();
    assert!(cert.c1 > 0.0);
    assert!(cert.min_form > 0.0);
    assert!(cert.c0_range.0 > 0.0);
    assert!(cert.c1_max >= cert.c1);
}

#[test]
fn tensors_have_the_expected_symmetries() {
    let (_, d) = mid();
    let scale = d.gamma.max_abs();
    let (g, l) = d.symmetry_residuals();
    assert!(g < 1e-10 * scale, "Γ - Γ* = {g:e}");
    assert!(l < 1e-10 * scale, "Λ + Λ* = {l:e}");
    assert!(d.decomposition_residual() < 1e-10 * scale);
    assert!(d.max_defect() < ResolventConfig::default().defect_tol);
    assert!(u_diagonalization_residual() < 1e-14);
}

#[test]
fn dynamic_normalization_is_a_uniform_rescaling() {
    let (_, d) = mid();
    let dy = d.dynamic();
    let z = [C64::new(0.3, -0.4)];
    assert!((dy.gamma_form(&z) - DYNAMIC_SCALE * d.gamma_form(&z)).abs() < 1e-15);
    assert!((dy.gamma0_form(&z) - DYNAMIC_SCALE * d.gamma0_form(&z)).abs() < 1e-15);
}

#[test]
fn full_form_approaches_the_leading_form_near_bifurcation() {
    let (_, near) = at(1.70);
    let (_, far) = mid();
    let z = [C64::new(1.0, 0.0)];
    let rel = |d: &FgrData| (d.gamma_form(&z) - d.gamma0_form(&z)).abs() / d.gamma0_form(&z);
    assert!(rel(&near) < rel(far), "{} vs {}", rel(&near), rel(far));
    assert!(rel(&near) < 0.05);
}

#[test]
fn below_threshold_identity_vanishes() {
    let (p, _) = mid();
    let l = lab();
    let xi_lin = aligned_linear_modes(&l.spec, &p.modes);
    let inp = LeadingInputs {
        spec: &l.spec,
        v: &p.op.v,
        lambda: p.op.lambda,
        sigma: 1.0,
        delta: p.bp.profile.delta,
        energies: &p.modes.energies,
        xi_lin: &xi_lin,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..3 {
        let z = random_z(&mut rng, 1);
        let h = h22_identity_check(&inp, &z).unwrap();
        assert!(h.relative_bracket.abs() < 1e-10, "{}", h.relative_bracket);
        assert!(h.value.abs() <= 1e-10 * h.scale.max(1e-300));
    }
}

#[test]
fn limiting_absorption_matches_plemelj_quadrature() {
    for energy in [0.5, 2.0] {
        let c = plemelj_check(&lab().grid, energy, 1.0, &ResolventConfig::default()).unwrap();
        assert!(c.direct_error < 1e-8, "E = {energy}: {}", c.direct_error);
        assert!(c.extrapolated_error < 1e-3, "E = {energy}: {}", c.extrapolated_error);
        assert!(c.oracle[1] > 0.0, "outgoing convention gives a positive imaginary part");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn below_threshold_resolvent_is_self_adjoint(a in -2.0f64..2.0, w in 0.5f64..2.0, shift in 2.0f64..6.0) {
        let l = lab();
        let (p, _) = mid();
        let x = l.grid.axis();
        let f: Vec<f64> = x.iter().map(|x| (-(x - a).powi(2) / (w * w)).exp() * (1.0 + 0.2 * x)).collect();
        let b = self_adjoint_bracket(&l.grid, &l.spec, &p.op.v, shift, &f).unwrap();
        prop_assert!(b.abs() < 1e-10);
    }

    #[test]
    fn adjoint_tensor_conjugates_the_form(re in proptest::collection::vec(-1.0f64..1.0, 16), zr in -1.0f64..1.0, zi in -1.0f64..1.0) {
        let mut t = QuadraticTensor::zeros(2);
        let mut it = re.iter();
        for k in 0..2 {
            for l in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        let v = *it.next().unwrap();
                        t.set(k, l, a, b, C64::new(v, 0.5 * v));
                    }
                }
            }
        }
        let z = [C64::new(zr, zi), C64::new(zi, -zr)];
        let lhs = t.adjoint().form(&z);
        let rhs = t.form(&z).conj();
        prop_assert!((lhs - rhs).norm() < 1e-12);
    }
}
