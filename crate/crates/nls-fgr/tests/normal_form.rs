mod common;

use std::sync::OnceLock;

use common::{Lab, Point};
use nls_fgr::evolution::Corrections;
use nls_fgr::fgr::FgrData;
use nls_fgr::normal_form::{
    build_normal_form, key_conj, key_degree, key_frequency, keys_of_degree, monomial, NormalForm, NormalFormConfig,
};
use nls_fgr::C64;
use proptest::prelude::*;

struct Fixture {
    point: Point,
    fgr: FgrData,
    nf: NormalForm,
}

fn lab() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(Lab::small)
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let point = lab().point(1.74);
        let fgr = point.fgr(lab());
        let nf = build_normal_form(&point.op, &point.modes, &point.proj, &NormalFormConfig::default()).unwrap();
        Fixture { point, fgr, nf }
    })
}

#[test]
fn defining_relations_hold_after_substitution() {
    let nf = &fixture().nf;
    assert!(nf.relation_residual < 1e-8, "{:e}", nf.relation_residual);
    assert!(nf.driven_residual < 1e-6, "{:e}", nf.driven_residual);
    assert!(nf.coefficients.conjugate_defect() < 1e-10);
    assert!(nf.max_defect() < NormalFormConfig::default().resolvent.defect_tol);
}

#[test]
fn corrections_vanish_at_the_soliton() {
    let nf = &fixture().nf;
    let v = nf.values(&[C64::new(0.0, 0.0)]);
    assert_eq!(v.a1, 0.0);
    assert_eq!(v.a2, 0.0);
    assert!(v.p.iter().chain(&v.q).all(|x| *x == 0.0));
    assert!(nf.driven_field(&[C64::new(0.0, 0.0)]).iter().all(|x| x.norm() == 0.0));
}

#[test]
fn corrections_have_no_linear_part() {
    let nf = &fixture().nf;
    let size = |eps: f64| {
        let v = nf.values(&[C64::new(0.6, 0.8) * eps]);
        v.p.iter().chain(&v.q).fold(v.a1.abs().max(v.a2.abs()), |m, x| m.max(x.abs()))
    };
    let ratio = size(2e-3) / size(1e-3);
    assert!(ratio > 3.9 && ratio < 8.1, "doubling z scales the corrections by {ratio}");
}

#[test]
fn pi22_matches_the_quarter_normalized_leading_form() {
    let f = fixture();
    let z = [C64::new(0.6, 0.8)];
    let rep = f.nf.pi22_identity(&f.fgr, &z, &lab().spec, &f.point.op.v).unwrap();
    assert!(rep.pi22 > 0.0);
    assert!(rep.pi22_imag.abs() < 1e-10 * rep.pi22);
    assert!(rep.theta22_relative < 1e-10, "{:e}", rep.theta22_relative);
    assert!(
        rep.dynamic_discrepancy.abs() < 0.02 * rep.remainder_scale,
        "2Π - Γ₀/4 = {:e} against δ³|z|⁴ = {:e}",
        rep.dynamic_discrepancy,
        rep.remainder_scale
    );
    let poly = f.nf.pi22_poly().unwrap();
    assert!((poly.eval(&z).re - rep.pi22).abs() < 1e-14);
}

#[test]
fn two_mode_closed_forms_reject_a_single_mode() {
    let nf = &fixture().nf;
    let z = [C64::new(1.0, 0.0)];
    assert!(nf.im_n11_closed_form(&z).is_err());
    assert!(nf.a11_closed_form(&z).is_err());
}

#[test]
fn coefficient_export_is_valid_json() {
    let nf = &fixture().nf;
    let v: serde_json::Value = serde_json::from_str(&nf.coefficients_json().unwrap()).unwrap();
    assert!(v.is_object());
}

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

proptest! {
    #[test]
    fn key_enumeration_counts(nm in 1usize..4, m in 0usize..4, n in 0usize..4) {
        let keys = keys_of_degree(nm, m, n);
        prop_assert_eq!(keys.len(), binom(nm + m - 1, m) * binom(nm + n - 1, n));
        for k in &keys {
            prop_assert_eq!(key_degree(k), (m, n));
            prop_assert_eq!(key_degree(&key_conj(k)), (n, m));
        }
    }

    #[test]
    fn conjugate_key_conjugates_the_monomial(a in 0u8..3, b in 0u8..3, c in 0u8..3, d in 0u8..3, x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let key = vec![a, b, c, d];
        let z = [C64::new(x, y), C64::new(y, 0.5 * x)];
        let lhs = monomial(&key_conj(&key), &z);
        let rhs = monomial(&key, &z).conj();
        prop_assert!((lhs - rhs).norm() < 1e-14);
        let e = [1.3, 1.7];
        prop_assert!((key_frequency(&key_conj(&key), &e) + key_frequency(&key, &e)).abs() < 1e-14);
    }
}
