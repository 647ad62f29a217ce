//! Normal-form coefficients of the modulation equations.
//!
//! Every polynomial in (z, z̄) is stored by multi-index: a key of length 2N
//! holds the exponents (a₁..a_N, b₁..b_N) of the monomial Π z_k^{a_k} z̄_k^{b_k}.
//! Coefficients are scalars ([`ScalarPoly`]) or complex fields ([`FieldPoly`],
//! [`PairPoly`]).

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{CorrectionValues, Corrections};
use crate::fgr::{FgrData, SolveDiagnostics, DYNAMIC_SCALE};
use crate::grid::{weighted_norm, Field, Grid, WeightedNormSpec};
use crate::ground_state::pow_abs;
use crate::krylov::KrylovConfig;
use crate::linear_spectrum::{project_continuous_slice, LinearSpectrum};
use crate::linearization::{LinearizedOperator, NeutralModeSet, RieszProjector};
use crate::ops::solve_schrodinger;
use crate::pair::Pair;
use crate::resolvent::{MatrixResolvent, ResolventConfig};

pub type Key = Vec<u8>;

const I: C64 = C64 { re: 0.0, im: 1.0 };

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// (|a|, |b|) of a key.
pub fn key_degree(key: &[u8]) -> (usize, usize) {
    let n = key.len() / 2;
    let m = key[..n].iter().map(|&x| x as usize).sum();
    let b = key[n..].iter().map(|&x| x as usize).sum();
    (m, b)
}

/// Key of the complex-conjugate monomial.
pub fn key_conj(key: &[u8]) -> Key {
    let n = key.len() / 2;
    let mut out = key[n..].to_vec();
    out.extend_from_slice(&key[..n]);
    out
}

fn key_add(a: &[u8], b: &[u8]) -> Key {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Σ (a_k − b_k) E_k: the frequency of the monomial under ż_k = −iE_k z_k.
pub fn key_frequency(key: &[u8], energies: &[f64]) -> f64 {
    let n = energies.len();
    (0..n).map(|k| (key[k] as f64 - key[n + k] as f64) * energies[k]).sum()
}

pub fn monomial(key: &[u8], z: &[C64]) -> C64 {
    let n = z.len();
    let mut out = c(1.0);
    for k in 0..n {
        for _ in 0..key[k] {
            out *= z[k];
        }
        for _ in 0..key[n + k] {
            out *= z[k].conj();
        }
    }
    out
}

fn unit_key(nm: usize, k: usize, bar: bool) -> Key {
    let mut key = vec![0u8; 2 * nm];
    key[if bar { nm + k } else { k }] = 1;
    key
}

/// Every key of exponent degree (m, n) for N modes.
pub fn keys_of_degree(nm: usize, m: usize, n: usize) -> Vec<Key> {
    fn compositions(parts: usize, total: usize) -> Vec<Vec<u8>> {
        if parts == 0 {
            return if total == 0 { vec![vec![]] } else { vec![] };
        }
        let mut out = Vec::new();
        for first in 0..=total {
            for mut rest in compositions(parts - 1, total - first) {
                let mut v = vec![first as u8];
                v.append(&mut rest);
                out.push(v);
            }
        }
        out
    }
    let mut out = Vec::new();
    for a in compositions(nm, m) {
        for b in compositions(nm, n) {
            let mut k = a.clone();
            k.extend_from_slice(&b);
            out.push(k);
        }
    }
    out
}

/// Representative of each conjugate pair {key, conj key}: more z than z̄,
/// or the lexicographically larger key on a tie.
fn is_canonical(key: &[u8]) -> bool {
    let (m, n) = key_degree(key);
    m > n || (m == n && key >= key_conj(key).as_slice())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScalarPoly {
    pub terms: BTreeMap<Key, C64>,
}

impl ScalarPoly {
    pub fn add_term(&mut self, key: Key, v: C64) {
        *self.terms.entry(key).or_insert(c(0.0)) += v;
    }

    pub fn get(&self, key: &[u8]) -> C64 {
        self.terms.get(key).copied().unwrap_or(c(0.0))
    }

    pub fn add(&self, other: &ScalarPoly) -> ScalarPoly {
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), *v);
        }
        out
    }

    pub fn scaled(&self, a: C64) -> ScalarPoly {
        ScalarPoly {
            terms: self.terms.iter().map(|(k, v)| (k.clone(), a * v)).collect(),
        }
    }

    pub fn mul(&self, other: &ScalarPoly) -> ScalarPoly {
        let mut out = ScalarPoly::default();
        for (ka, va) in &self.terms {
            for (kb, vb) in &other.terms {
                out.add_term(key_add(ka, kb), va * vb);
            }
        }
        out
    }

    pub fn part(&self, m: usize, n: usize) -> ScalarPoly {
        ScalarPoly {
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| key_degree(k) == (m, n))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    pub fn eval(&self, z: &[C64]) -> C64 {
        self.terms.iter().map(|(k, v)| v * monomial(k, z)).sum()
    }

    /// The polynomial z ↦ conj(p(z)).
    pub fn conj(&self) -> ScalarPoly {
        ScalarPoly {
            terms: self.terms.iter().map(|(k, v)| (key_conj(k), v.conj())).collect(),
        }
    }

    /// Largest coefficient of p − conj(p); zero for real-valued polynomials.
    pub fn reality_defect(&self) -> f64 {
        let d = self.add(&self.conj().scaled(c(-1.0)));
        d.max_abs()
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Field polynomial Σ c_key profile.
    pub fn times_profile(&self, profile: &[f64]) -> FieldPoly {
        let mut out = FieldPoly::new(profile.len());
        for (k, v) in &self.terms {
            out.add_term(k.clone(), profile.iter().map(|p| v * p).collect());
        }
        out
    }

    /// Rows (key, re, im) for export.
    pub fn rows(&self) -> Vec<CoefficientRow> {
        self.terms
            .iter()
            .map(|(k, v)| CoefficientRow {
                key: k.clone(),
                re: v.re,
                im: v.im,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CoefficientRow {
    pub key: Vec<u8>,
    pub re: f64,
    pub im: f64,
}

/// Polynomial with complex field coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPoly {
    pub len: usize,
    pub terms: BTreeMap<Key, Vec<C64>>,
}

impl FieldPoly {
    pub fn new(len: usize) -> FieldPoly {
        FieldPoly {
            len,
            terms: BTreeMap::new(),
        }
    }

    pub fn add_term(&mut self, key: Key, f: Vec<C64>) {
        match self.terms.get_mut(&key) {
            Some(g) => g.iter_mut().zip(&f).for_each(|(a, b)| *a += b),
            None => {
                self.terms.insert(key, f);
            }
        }
    }

    /// Σ_k (cz_k z_k + cb_k z̄_k) profile_k.
    pub fn linear(profiles: &[Vec<f64>], cz: C64, cb: C64) -> FieldPoly {
        let nm = profiles.len();
        let mut out = FieldPoly::new(profiles[0].len());
        for (k, p) in profiles.iter().enumerate() {
            out.add_term(unit_key(nm, k, false), p.iter().map(|x| cz * x).collect());
            out.add_term(unit_key(nm, k, true), p.iter().map(|x| cb * x).collect());
        }
        out
    }

    pub fn get(&self, key: &[u8]) -> Option<&Vec<C64>> {
        self.terms.get(key)
    }

    pub fn add(&self, other: &FieldPoly) -> FieldPoly {
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), v.clone());
        }
        out
    }

    pub fn scaled(&self, a: C64) -> FieldPoly {
        FieldPoly {
            len: self.len,
            terms: self
                .terms
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| a * x).collect()))
                .collect(),
        }
    }

    pub fn times_profile(&self, p: &[f64]) -> FieldPoly {
        FieldPoly {
            len: self.len,
            terms: self
                .terms
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().zip(p).map(|(x, y)| x * y).collect()))
                .collect(),
        }
    }

    pub fn mul(&self, other: &FieldPoly) -> FieldPoly {
        let mut out = FieldPoly::new(self.len);
        for (ka, va) in &self.terms {
            for (kb, vb) in &other.terms {
                out.add_term(key_add(ka, kb), va.iter().zip(vb).map(|(x, y)| x * y).collect());
            }
        }
        out
    }

    pub fn scalar_mul(&self, s: &ScalarPoly) -> FieldPoly {
        let mut out = FieldPoly::new(self.len);
        for (ka, va) in &self.terms {
            for (kb, vb) in &s.terms {
                out.add_term(key_add(ka, kb), va.iter().map(|x| x * vb).collect());
            }
        }
        out
    }

    pub fn part(&self, m: usize, n: usize) -> FieldPoly {
        FieldPoly {
            len: self.len,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| key_degree(k) == (m, n))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Terms of total degree `d`.
    pub fn order(&self, d: usize) -> FieldPoly {
        FieldPoly {
            len: self.len,
            terms: self
                .terms
                .iter()
                .filter(|(k, _)| {
                    let (a, b) = key_degree(k);
                    a + b == d
                })
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn eval(&self, z: &[C64]) -> Vec<C64> {
        let mut out = vec![c(0.0); self.len];
        for (k, v) in &self.terms {
            let m = monomial(k, z);
            out.iter_mut().zip(v).for_each(|(o, x)| *o += m * x);
        }
        out
    }

    /// ∫ p g per coefficient, for a real profile g.
    pub fn integrate(&self, g: &[f64], vol: f64) -> ScalarPoly {
        ScalarPoly {
            terms: self
                .terms
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().zip(g).map(|(x, y)| x * y).sum::<C64>() * vol))
                .collect(),
        }
    }
}

/// Two-component polynomial (first, second).
#[derive(Debug, Clone, PartialEq)]
pub struct PairPoly {
    pub u: FieldPoly,
    pub v: FieldPoly,
}

impl PairPoly {
    pub fn new(len: usize) -> PairPoly {
        PairPoly {
            u: FieldPoly::new(len),
            v: FieldPoly::new(len),
        }
    }

    pub fn add(&self, other: &PairPoly) -> PairPoly {
        PairPoly {
            u: self.u.add(&other.u),
            v: self.v.add(&other.v),
        }
    }

    pub fn coefficient(&self, key: &[u8]) -> Pair {
        let z = vec![c(0.0); self.u.len];
        Pair {
            u: self.u.get(key).cloned().unwrap_or_else(|| z.clone()),
            v: self.v.get(key).cloned().unwrap_or(z),
        }
    }

    pub fn insert(&mut self, key: Key, p: Pair) {
        self.u.terms.insert(key.clone(), p.u);
        self.v.terms.insert(key, p.v);
    }

    pub fn part(&self, m: usize, n: usize) -> PairPoly {
        PairPoly {
            u: self.u.part(m, n),
            v: self.v.part(m, n),
        }
    }

    pub fn eval(&self, z: &[C64]) -> Pair {
        Pair {
            u: self.u.eval(z),
            v: self.v.eval(z),
        }
    }

    pub fn keys(&self) -> Vec<Key> {
        let mut k: Vec<Key> = self.u.terms.keys().cloned().collect();
        for x in self.v.terms.keys() {
            if !self.u.terms.contains_key(x) {
                k.push(x.clone());
            }
        }
        k.sort();
        k
    }
}

/// Coefficients C₁..C₆(σ) of the fourth-order expansion.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SigmaConstants(pub [f64; 6]);

impl Default for SigmaConstants {
    fn default() -> Self {
        SigmaConstants([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NormalFormConfig {
    pub resolvent: ResolventConfig,
    pub sigma_constants: SigmaConstants,
    /// A 2×2 (P, Q) system whose determinant falls below this fraction of E²
    /// is reported as resonant.
    pub resonance_tol: f64,
    /// Build JN_{m,n} for m+n = 4.
    pub fourth_order: bool,
}

impl Default for NormalFormConfig {
    fn default() -> Self {
        NormalFormConfig {
            resolvent: ResolventConfig::default(),
            sigma_constants: SigmaConstants::default(),
            resonance_tol: 1e-3,
            fourth_order: true,
        }
    }
}

/// Profile data the expansion is built from.
#[derive(Debug, Clone)]
pub struct ExpansionFrame {
    pub grid: Arc<Grid>,
    pub lambda: f64,
    pub sigma: f64,
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub energies: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    /// ⟨φ, ∂λφ⟩
    pub denominator: f64,
}

impl ExpansionFrame {
    pub fn new(op: &LinearizedOperator, modes: &NeutralModeSet) -> Result<ExpansionFrame> {
        let d = op.phi_dphi();
        if d.abs() < 1e-12 {
            return Err(Error::invalid("⟨φ, ∂λφ⟩ vanishes"));
        }
        Ok(ExpansionFrame {
            grid: op.grid.clone(),
            lambda: op.lambda,
            sigma: op.sigma,
            phi: op.phi.clone(),
            dphi: op.dphi.clone(),
            energies: modes.energies.clone(),
            xi: modes.xi.clone(),
            eta: modes.eta.clone(),
            denominator: d,
        })
    }

    pub fn count(&self) -> usize {
        self.energies.len()
    }

    pub fn vol(&self) -> f64 {
        self.grid.cell_volume()
    }

    fn phi_pow(&self, p: f64) -> Vec<f64> {
        self.phi.iter().map(|x| pow_abs(*x, p)).collect()
    }

    /// α·ξ with α = Re z.
    pub fn alpha_xi(&self) -> FieldPoly {
        FieldPoly::linear(&self.xi, c(0.5), c(0.5))
    }

    /// β·η with β = Im z.
    pub fn beta_eta(&self) -> FieldPoly {
        FieldPoly::linear(&self.eta, C64::new(0.0, -0.5), C64::new(0.0, 0.5))
    }

    /// z·ξ
    pub fn rho(&self) -> FieldPoly {
        FieldPoly::linear(&self.xi, c(1.0), c(0.0))
    }

    /// z·η
    pub fn omega(&self) -> FieldPoly {
        FieldPoly::linear(&self.eta, c(1.0), c(0.0))
    }

    fn conj_field(p: &FieldPoly) -> FieldPoly {
        FieldPoly {
            len: p.len,
            terms: p
                .terms
                .iter()
                .map(|(k, v)| (key_conj(k), v.iter().map(|x| x.conj()).collect()))
                .collect(),
        }
    }
}

/// Υ₁,₁ as a (1,1) polynomial.
pub fn upsilon11_poly(fr: &ExpansionFrame) -> ScalarPoly {
    let s = fr.sigma;
    let rho = fr.rho();
    let om = fr.omega();
    let rr = rho.mul(&ExpansionFrame::conj_field(&rho));
    let oo = om.mul(&ExpansionFrame::conj_field(&om));
    let integrand = rr
        .scaled(c(2.0 * s * s + s))
        .add(&oo.scaled(c(s)))
        .times_profile(&fr.phi_pow(2.0 * s - 1.0));
    integrand.integrate(&fr.dphi, fr.vol()).scaled(c(0.5 / fr.denominator))
}

/// Υ₁,₁ at one z.
pub fn upsilon11(fr: &ExpansionFrame, z: &[C64]) -> Result<f64> {
    if z.len() != fr.count() {
        return Err(Error::invalid("z length differs from the number of neutral modes"));
    }
    Ok(upsilon11_poly(fr).eval(z).re)
}

/// Nonlinearity blocks with JN = (N^Im, −N^Re).
#[derive(Debug, Clone)]
pub struct NonlinearExpansion {
    pub n_im: BTreeMap<usize, FieldPoly>,
    pub n_re: BTreeMap<usize, FieldPoly>,
    /// ⟨N^Im_{m,n}, φ⟩ for m+n = 4, available for every σ.
    pub im4_phi: Option<ScalarPoly>,
    pub constants: SigmaConstants,
}

impl NonlinearExpansion {
    /// JN of total order `d`, when materialized.
    pub fn jn(&self, d: usize) -> Option<PairPoly> {
        let (a, b) = (self.n_im.get(&d)?, self.n_re.get(&d)?);
        Some(PairPoly {
            u: a.clone(),
            v: b.scaled(c(-1.0)),
        })
    }
}

/// Driven corrections R_{m,n} and the order-three forcing X_{m,n}.
#[derive(Debug, Clone)]
pub struct DrivenCorrections {
    pub r2: PairPoly,
    pub r3: PairPoly,
    pub x3: PairPoly,
    pub solves: Vec<SolveDiagnostics>,
}

impl DrivenCorrections {
    pub fn total(&self) -> PairPoly {
        self.r2.add(&self.r3)
    }

    /// R̃ = R − Σ_{m+n=2} R_{m,n}(z).
    pub fn r_tilde(&self, r: &Pair, z: &[C64]) -> Pair {
        r.sub(&self.r2.eval(z))
    }

    /// R_{≥4} = R − Σ_{m+n=2,3} R_{m,n}(z).
    pub fn r_ge4(&self, r: &Pair, z: &[C64]) -> Pair {
        r.sub(&self.total().eval(z))
    }
}

#[derive(Debug, Clone, Default)]
pub struct NormalFormCoefficients {
    pub a1: ScalarPoly,
    pub a2: ScalarPoly,
    pub p: Vec<ScalarPoly>,
    pub q: Vec<ScalarPoly>,
}

impl NormalFormCoefficients {
    fn with_modes(nm: usize) -> Self {
        NormalFormCoefficients {
            p: vec![ScalarPoly::default(); nm],
            q: vec![ScalarPoly::default(); nm],
            ..Default::default()
        }
    }

    pub fn evaluate(&self, z: &[C64]) -> CorrectionValues {
        CorrectionValues {
            a1: self.a1.eval(z).re,
            a2: self.a2.eval(z).re,
            p: self.p.iter().map(|p| p.eval(z).re).collect(),
            q: self.q.iter().map(|q| q.eval(z).re).collect(),
        }
    }

    /// Largest coefficient-level deviation from conjugate symmetry.
    pub fn conjugate_defect(&self) -> f64 {
        let mut m = self.a1.reality_defect().max(self.a2.reality_defect());
        for (p, q) in self.p.iter().zip(&self.q) {
            m = m.max(p.reality_defect()).max(q.reality_defect());
        }
        m
    }

    /// Σ_n (P^{(n)} ξ_n, Q^{(n)} η_n) + (A⁽¹⁾∂λφ, A⁽²⁾φ), restricted to total order `d`.
    fn correction_fields(&self, fr: &ExpansionFrame, d: usize) -> (FieldPoly, FieldPoly) {
        let pick = |s: &ScalarPoly| ScalarPoly {
            terms: s
                .terms
                .iter()
                .filter(|(k, _)| {
                    let (a, b) = key_degree(k);
                    a + b == d
                })
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        };
        let mut u = pick(&self.a1).times_profile(&fr.dphi);
        let mut v = pick(&self.a2).times_profile(&fr.phi);
        for k in 0..fr.count() {
            u = u.add(&pick(&self.p[k]).times_profile(&fr.xi[k]));
            v = v.add(&pick(&self.q[k]).times_profile(&fr.eta[k]));
        }
        (u, v)
    }

    pub fn rows(&self) -> BTreeMap<String, Vec<CoefficientRow>> {
        let mut out = BTreeMap::new();
        out.insert("A1".to_string(), self.a1.rows());
        out.insert("A2".to_string(), self.a2.rows());
        for (k, (p, q)) in self.p.iter().zip(&self.q).enumerate() {
            out.insert(format!("P{}", k + 1), p.rows());
            out.insert(format!("Q{}", k + 1), q.rows());
        }
        out
    }
}

/// Everything built for one branch point.
#[derive(Debug, Clone)]
pub struct NormalForm {
    pub frame: ExpansionFrame,
    pub upsilon: ScalarPoly,
    pub expansion: NonlinearExpansion,
    pub driven: DrivenCorrections,
    pub coefficients: NormalFormCoefficients,
    /// Largest violation of the defining linear relations after substitution.
    pub relation_residual: f64,
    /// Largest ||(L + iω)R − P_c(forcing)|| relative residual.
    pub driven_residual: f64,
    pub warnings: Vec<String>,
}

struct Projections {
    im_phi: ScalarPoly,
    re_dphi: ScalarPoly,
    im_eta: Vec<ScalarPoly>,
    re_xi: Vec<ScalarPoly>,
}

fn projections(fr: &ExpansionFrame, n_im: &FieldPoly, n_re: &FieldPoly) -> Projections {
    let vol = fr.vol();
    Projections {
        im_phi: n_im.integrate(&fr.phi, vol),
        re_dphi: n_re.integrate(&fr.dphi, vol),
        im_eta: fr.eta.iter().map(|e| n_im.integrate(e, vol)).collect(),
        re_xi: fr.xi.iter().map(|x| n_re.integrate(x, vol)).collect(),
    }
}

/// Quadratic blocks N^Im, N^Re.
fn second_order(fr: &ExpansionFrame) -> (FieldPoly, FieldPoly) {
    let s = fr.sigma;
    let u1 = fr.alpha_xi();
    let v1 = fr.beta_eta();
    let p = fr.phi_pow(2.0 * s - 1.0);
    let n_im = u1.mul(&v1).scaled(c(2.0 * s)).times_profile(&p);
    let n_re = u1
        .mul(&u1)
        .scaled(c(2.0 * s + 1.0))
        .add(&v1.mul(&v1))
        .scaled(c(s))
        .times_profile(&p);
    (n_im, n_re)
}

/// Cubic blocks from the second-order correction fields (U₂, V₂).
fn third_order(fr: &ExpansionFrame, u2: &FieldPoly, v2: &FieldPoly) -> (FieldPoly, FieldPoly) {
    let s = fr.sigma;
    let u1 = fr.alpha_xi();
    let v1 = fr.beta_eta();
    let p1 = fr.phi_pow(2.0 * s - 1.0);
    let p2 = fr.phi_pow(2.0 * s - 2.0);
    let uu = u1.mul(&u1);
    let vv = v1.mul(&v1);
    let n_im = u1
        .mul(v2)
        .add(&v1.mul(u2))
        .scaled(c(2.0 * s))
        .times_profile(&p1)
        .add(
            &uu.add(&vv)
                .mul(&v1)
                .scaled(c(s))
                .add(&uu.mul(&v1).scaled(c(2.0 * s * (s - 1.0))))
                .times_profile(&p2),
        );
    let k3 = s * (2.0 * s - 1.0 + 4.0 / 3.0 * (s - 1.0) * (s - 2.0));
    let n_re = u1
        .mul(u2)
        .scaled(c(2.0 * s * (2.0 * s + 1.0)))
        .add(&v1.mul(v2).scaled(c(2.0 * s)))
        .times_profile(&p1)
        .add(
            &uu.mul(&u1)
                .scaled(c(k3))
                .add(&u1.mul(&vv).scaled(c(s * (2.0 * s - 1.0))))
                .times_profile(&p2),
        );
    (n_im, n_re)
}

/// Quartic blocks; `weight` multiplies every φ power by one more φ, so the
/// product with φ is formed before any negative power appears.
#[allow(clippy::too_many_arguments)]
fn fourth_order(
    fr: &ExpansionFrame,
    cst: &SigmaConstants,
    u2: &FieldPoly,
    v2: &FieldPoly,
    u3: &FieldPoly,
    v3: &FieldPoly,
    weight: bool,
    imag_only: bool,
) -> Result<(FieldPoly, Option<FieldPoly>)> {
    let s = fr.sigma;
    let [c1, c2, c3, c4, c5, c6] = cst.0;
    let shift = if weight { 1.0 } else { 0.0 };
    let pw = |e: f64| -> Result<Vec<f64>> {
        let e = e + shift;
        if e < 0.0 {
            return Err(Error::invalid(format!(
                "fourth-order block needs φ^{e}; only the pairing with (φ, 0) is defined for σ = {s}"
            )));
        }
        Ok(fr.phi_pow(e))
    };
    let u1 = fr.alpha_xi();
    let v1 = fr.beta_eta();
    let uu = u1.mul(&u1);
    let vv = v1.mul(&v1);
    let uv = u1.mul(&v1);
    let mut n_im = u1
        .mul(v3)
        .add(&v1.mul(u3))
        .add(&u2.mul(v2))
        .scaled(c(2.0 * s))
        .times_profile(&pw(2.0 * s - 1.0)?)
        .add(
            &uu.scaled(c(2.0 * s - 1.0))
                .add(&vv.scaled(c(3.0)))
                .mul(v2)
                .scaled(c(s))
                .add(&uv.mul(u2).scaled(c(2.0 * s * (2.0 * s - 1.0))))
                .times_profile(&pw(2.0 * s - 2.0)?),
        );
    let k = 2.0 * s * (s - 1.0);
    if k != 0.0 {
        let t = uu
            .mul(&uv)
            .scaled(c((2.0 * s - 1.0) / 3.0))
            .add(&uv.mul(&vv))
            .scaled(c(k))
            .times_profile(&pw(2.0 * s - 3.0)?);
        n_im = n_im.add(&t);
    }
    if imag_only {
        return Ok((n_im, None));
    }
    let mut n_re = u1
        .mul(u3)
        .scaled(c(2.0 * s * (2.0 * s + 1.0)))
        .add(&v1.mul(v3).scaled(c(2.0 * s)))
        .add(&u2.mul(u2).scaled(c(s * (2.0 * s + 1.0))))
        .add(&v2.mul(v2).scaled(c(s)))
        .times_profile(&pw(2.0 * s - 1.0)?)
        .add(
            &uu.scaled(c(3.0 * c1))
                .add(&vv.scaled(c(c2)))
                .mul(u2)
                .scaled(c(s))
                .add(&uv.mul(v2).scaled(c(2.0 * s * c3)))
                .times_profile(&pw(2.0 * s - 2.0)?),
        );
    if c4 != 0.0 || c5 != 0.0 || c6 != 0.0 {
        let t = uu
            .mul(&uu)
            .scaled(c(c4))
            .add(&vv.mul(&vv).scaled(c(c5)))
            .add(&uu.mul(&vv).scaled(c(c6)))
            .times_profile(&pw(2.0 * s - 3.0)?);
        n_re = n_re.add(&t);
    }
    Ok((n_im, Some(n_re)))
}

/// Extra scalar terms of the order-three relations.
struct UpsilonTerms {
    /// Υ⟨z·η, φ⟩
    eta_phi: ScalarPoly,
    /// Υ⟨z·ξ, ∂λφ⟩
    xi_dphi: ScalarPoly,
    /// Υ Σ_k z̄_k[⟨η_k, η_n⟩ − ⟨ξ_k, ξ_n⟩] per n
    mode: Vec<ScalarPoly>,
}

fn upsilon_terms(fr: &ExpansionFrame, ups: &ScalarPoly) -> UpsilonTerms {
    let vol = fr.vol();
    let nm = fr.count();
    let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * vol;
    let eta_phi = ups.mul(&fr.omega().integrate(&fr.phi, vol));
    let xi_dphi = ups.mul(&fr.rho().integrate(&fr.dphi, vol));
    let mode = (0..nm)
        .map(|n| {
            let mut lin = ScalarPoly::default();
            for k in 0..nm {
                let v = ip(&fr.eta[k], &fr.eta[n]) - ip(&fr.xi[k], &fr.xi[n]);
                lin.add_term(unit_key(nm, k, true), c(v));
            }
            ups.mul(&lin)
        })
        .collect();
    UpsilonTerms { eta_phi, xi_dphi, mode }
}

/// Solves the displayed relations at one total order and returns the worst
/// substitution residual.
fn solve_order(
    fr: &ExpansionFrame,
    order: usize,
    proj: &Projections,
    ups: Option<&UpsilonTerms>,
    coeffs: &mut NormalFormCoefficients,
    tol: f64,
    warnings: &mut Vec<String>,
) -> f64 {
    let nm = fr.count();
    let d = fr.denominator;
    let mut worst: f64 = 0.0;
    for m in (0..=order).rev() {
        let n = order - m;
        for key in keys_of_degree(nm, m, n) {
            if !is_canonical(&key) {
                continue;
            }
            let conj = key_conj(&key);
            let self_conj = conj == key;
            let w = key_frequency(&key, &fr.energies);
            // A^{(1)}, A^{(2)}
            let mut im = proj.im_phi.get(&key);
            let mut re = proj.re_dphi.get(&key);
            if let Some(u) = ups {
                im -= 0.5 * I * u.eta_phi.get(&key);
                re -= 0.5 * u.xi_dphi.get(&key);
            }
            let (a1, a2) = if m != n {
                let a1 = im / (I * w * d);
                let a2 = -(re / d + a1) / (I * w);
                worst = worst
                    .max((I * w * a1 - im / d).norm())
                    .max((-I * w * a2 - a1 - re / d).norm());
                (a1, a2)
            } else if w.abs() > 1e-12 * fr.energies[0].abs() {
                let a1 = im / (I * w * d);
                worst = worst.max((I * w * a1 - im / d).norm());
                (a1, c(0.0))
            } else {
                (c(0.0), c(0.0))
            };
            coeffs.a1.add_term(key.clone(), a1);
            coeffs.a2.add_term(key.clone(), a2);
            if !self_conj {
                coeffs.a1.add_term(conj.clone(), a1.conj());
                coeffs.a2.add_term(conj.clone(), a2.conj());
            }
            // P^{(k)}, Q^{(k)}
            for k in 0..nm {
                let e = fr.energies[k];
                let r1 = -proj.im_eta[k].get(&key);
                let r2 = proj.re_xi[k].get(&key);
                let det = e * e - w * w;
                let resonant = order == 3 && m.abs_diff(n) == 1;
                let (p, q) = if !resonant {
                    if det.abs() < tol * e * e {
                        warnings.push(format!(
                            "small denominator {det:.3e} for mode {} at multi-index {key:?}",
                            k + 1
                        ));
                    }
                    // [-iω  -E; E  -iω] (P, Q) = (r1, r2)
                    let det_c = (-I * w) * (-I * w) + e * e;
                    let p = ((-I * w) * r1 + e * r2) / det_c;
                    let q = ((-I * w) * r2 - e * r1) / det_c;
                    worst = worst
                        .max((-I * w * p - e * q - r1).norm())
                        .max((-I * w * q + e * p - r2).norm());
                    (p, q)
                } else {
                    // solve on the (1,2) side, then close by conjugation
                    let (ck, wk) = (conj.clone(), -w);
                    let mut rhs = -proj.im_eta[k].get(&ck) + I * proj.re_xi[k].get(&ck);
                    if let Some(u) = ups {
                        rhs += I * u.mode[k].get(&ck);
                    }
                    let denom = 2.0 * (wk - e);
                    if denom.abs() < tol * e {
                        warnings.push(format!("resonant denominator at multi-index {ck:?}"));
                    }
                    let q12 = rhs / denom;
                    let p12 = I * q12;
                    let lhs = (I * e - I * wk) * p12 + (wk - e) * q12;
                    worst = worst.max((lhs - rhs).norm());
                    (p12.conj(), q12.conj())
                };
                coeffs.p[k].add_term(key.clone(), p);
                coeffs.q[k].add_term(key.clone(), q);
                if !self_conj {
                    coeffs.p[k].add_term(conj.clone(), p.conj());
                    coeffs.q[k].add_term(conj.clone(), q.conj());
                }
            }
        }
    }
    worst
}

/// (L + iω − 0)^{-1} P_c F per canonical key, closed by conjugation.
fn solve_driven(
    res: &MatrixResolvent,
    fr: &ExpansionFrame,
    forcing: &PairPoly,
    order: usize,
    solves: &mut Vec<SolveDiagnostics>,
    worst: &mut f64,
) -> Result<PairPoly> {
    let nm = fr.count();
    let mut out = PairPoly::new(fr.phi.len());
    let scale = fr.energies.iter().sum::<f64>() / nm as f64;
    for m in (0..=order).rev() {
        for key in keys_of_degree(nm, m, order - m) {
            if !is_canonical(&key) {
                continue;
            }
            let f = forcing.coefficient(&key);
            let w = key_frequency(&key, &fr.energies);
            let r = res.resolve(w, &f, scale)?;
            let x = Pair::from_stacked(r.best());
            let rel = res.residual(w, &x, &f);
            if f.norm(fr.vol()) > 1e-300 {
                *worst = worst.max(rel);
            }
            solves.push(SolveDiagnostics {
                label: format!("driven {key:?}"),
                shift: w,
                eps: r.eps.clone(),
                regularized_errors: r.regularized_errors.clone(),
                defect: r.defect,
                iterations: r.iterations,
                residual: Some(rel),
            });
            let conj = key_conj(&key);
            if conj != key {
                out.insert(conj, x.conj());
            }
            out.insert(key, x);
        }
    }
    Ok(out)
}

/// Builds Υ₁,₁, JN_{m,n} (orders 2–4), R_{m,n} (orders 2–3) and A, P, Q.
pub fn build_normal_form(
    op: &LinearizedOperator,
    modes: &NeutralModeSet,
    proj: &RieszProjector,
    cfg: &NormalFormConfig,
) -> Result<NormalForm> {
    let fr = ExpansionFrame::new(op, modes)?;
    let nm = fr.count();
    let res = MatrixResolvent::new(op, proj, cfg.resolvent.clone());
    let mut warnings = Vec::new();
    let mut solves = Vec::new();
    let mut driven_worst: f64 = 0.0;
    let mut coeffs = NormalFormCoefficients::with_modes(nm);
    let ups = upsilon11_poly(&fr);

    let (im2, re2) = second_order(&fr);
    let pr2 = projections(&fr, &im2, &re2);
    let mut rel = solve_order(&fr, 2, &pr2, None, &mut coeffs, cfg.resonance_tol, &mut warnings);
    let jn2 = PairPoly {
        u: im2.clone(),
        v: re2.scaled(c(-1.0)),
    };
    let r2 = solve_driven(&res, &fr, &jn2, 2, &mut solves, &mut driven_worst)?;
    let (cu2, cv2) = coeffs.correction_fields(&fr, 2);
    let u2 = cu2.add(&r2.u);
    let v2 = cv2.add(&r2.v);

    let (im3, re3) = third_order(&fr, &u2, &v2);
    let ut = upsilon_terms(&fr, &ups);
    let pr3 = projections(&fr, &im3, &re3);
    rel = rel.max(solve_order(&fr, 3, &pr3, Some(&ut), &mut coeffs, cfg.resonance_tol, &mut warnings));
    let x3 = PairPoly {
        u: fr.beta_eta().scalar_mul(&ups).scaled(c(-1.0)),
        v: fr.alpha_xi().scalar_mul(&ups),
    };
    let f3 = PairPoly {
        u: im3.clone(),
        v: re3.scaled(c(-1.0)),
    }
    .add(&x3);
    let r3 = solve_driven(&res, &fr, &f3, 3, &mut solves, &mut driven_worst)?;

    let mut n_im = BTreeMap::from([(2, im2), (3, im3)]);
    let mut n_re = BTreeMap::from([(2, re2), (3, re3)]);
    let mut im4_phi = None;
    if cfg.fourth_order {
        let (cu3, cv3) = coeffs.correction_fields(&fr, 3);
        let u3 = cu3.add(&r3.u);
        let v3 = cv3.add(&r3.v);
        let ones = vec![1.0; fr.phi.len()];
        let (wim, _) = fourth_order(&fr, &cfg.sigma_constants, &u2, &v2, &u3, &v3, true, true)?;
        im4_phi = Some(wim.integrate(&ones, fr.vol()));
        match fourth_order(&fr, &cfg.sigma_constants, &u2, &v2, &u3, &v3, false, false) {
            Ok((im4, Some(re4))) => {
                n_im.insert(4, im4);
                n_re.insert(4, re4);
            }
            Ok(_) => {}
            Err(e) => warnings.push(e.to_string()),
        }
    }
    Ok(NormalForm {
        frame: fr,
        upsilon: ups,
        expansion: NonlinearExpansion {
            n_im,
            n_re,
            im4_phi,
            constants: cfg.sigma_constants,
        },
        driven: DrivenCorrections { r2, r3, x3, solves },
        coefficients: coeffs,
        relation_residual: rel,
        driven_residual: driven_worst,
        warnings,
    })
}

impl NormalForm {
    pub fn max_defect(&self) -> f64 {
        self.driven.solves.iter().map(|s| s.defect).fold(0.0, f64::max)
    }

    /// Complex field Σ_{m+n=2,3} R_{m,n}(z) written as R₁ + iR₂.
    pub fn driven_field(&self, z: &[C64]) -> Vec<C64> {
        let r = self.driven.total().eval(z);
        r.u.iter().zip(&r.v).map(|(a, b)| a + I * b).collect()
    }

    /// ⟨Im N_{1,1}, φ⟩ by direct quadrature of the quadratic block.
    pub fn im_n11_phi(&self, z: &[C64]) -> C64 {
        let fr = &self.frame;
        self.expansion.n_im[&2].part(1, 1).integrate(&fr.phi, fr.vol()).eval(z)
    }

    /// Closed form (E₁−E₂)/(4i)(z₁z̄₂ − z₂z̄₁)[⟨η₁,η₂⟩ + ⟨ξ₁,ξ₂⟩] for two modes.
    pub fn im_n11_closed_form(&self, z: &[C64]) -> Result<C64> {
        let fr = &self.frame;
        if fr.count() != 2 || z.len() != 2 {
            return Err(Error::invalid("closed form needs exactly two neutral modes"));
        }
        let vol = fr.vol();
        let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * vol;
        let g = ip(&fr.eta[0], &fr.eta[1]) + ip(&fr.xi[0], &fr.xi[1]);
        let e = fr.energies[0] - fr.energies[1];
        Ok(e / (4.0 * I) * (z[0] * z[1].conj() - z[1] * z[0].conj()) * g)
    }

    /// −[z₁z̄₂ + z₂z̄₁][⟨η₁,η₂⟩ + ⟨ξ₁,ξ₂⟩] / (4⟨φ, ∂λφ⟩).
    pub fn a11_closed_form(&self, z: &[C64]) -> Result<f64> {
        let fr = &self.frame;
        if fr.count() != 2 || z.len() != 2 {
            return Err(Error::invalid("closed form needs exactly two neutral modes"));
        }
        let vol = fr.vol();
        let ip = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * vol;
        let g = ip(&fr.eta[0], &fr.eta[1]) + ip(&fr.xi[0], &fr.xi[1]);
        let s = z[0] * z[1].conj() + z[1] * z[0].conj();
        Ok(-(s.re * g) / (4.0 * fr.denominator))
    }

    /// Υ₁,₁ A-term of order (1,1) built by the general rule.
    pub fn a11(&self, z: &[C64]) -> f64 {
        self.coefficients.a1.part(1, 1).eval(z).re
    }

    /// Π₂,₂ from its three-term representation.
    pub fn pi22_poly(&self) -> Result<ScalarPoly> {
        let fr = &self.frame;
        let vol = fr.vol();
        let jn = self
            .expansion
            .im4_phi
            .as_ref()
            .ok_or_else(|| Error::invalid("fourth-order block was not built"))?
            .part(2, 2);
        let r11 = self.driven.r2.v.part(1, 1).integrate(&fr.phi, vol);
        let mut out = jn.scaled(c(-1.0)).add(&self.upsilon.mul(&r11));
        for k in 0..fr.count() {
            let pe: f64 = fr.phi.iter().zip(&fr.eta[k]).map(|(a, b)| a * b).sum::<f64>() * vol;
            out = out.add(&self.upsilon.mul(&self.coefficients.q[k].part(1, 1)).scaled(c(pe)));
        }
        Ok(out.part(2, 2))
    }

    /// K₂,₀(z) = σφ^{2σ−1}(−(i/2)(2σ−1)ρω, −¾ω² + ¼(2σ−1)ρ²).
    pub fn k20(&self, z: &[C64]) -> Pair {
        let fr = &self.frame;
        let s = fr.sigma;
        let rho = fr.rho().eval(z);
        let om = fr.omega().eval(z);
        let p = fr.phi_pow(2.0 * s - 1.0);
        let n = p.len();
        Pair {
            u: (0..n)
                .map(|i| s * p[i] * (-0.5 * I * (2.0 * s - 1.0) * rho[i] * om[i]))
                .collect(),
            v: (0..n)
                .map(|i| s * p[i] * (-0.75 * om[i] * om[i] + 0.25 * (2.0 * s - 1.0) * rho[i] * rho[i]))
                .collect(),
        }
    }

    /// Π₂,₂ identity: the three-term value, the leading pairing, and their
    /// comparison with the leading FGR form.
    pub fn pi22_identity(&self, fgr: &FgrData, z: &[C64], spec: &LinearSpectrum, v: &[f64]) -> Result<Pi22Report> {
        let fr = &self.frame;
        if z.len() != fr.count() {
            return Err(Error::invalid("z length differs from the number of neutral modes"));
        }
        let pi = self.pi22_poly()?.eval(z);
        let r20 = self.driven.r2.part(2, 0).eval(z);
        let lead = -2.0 * r20.inner(&self.k20(z), fr.vol()).re;
        let g0 = fgr.gamma0_form(z);
        let z2: f64 = z.iter().map(|x| x.norm_sqr()).sum();
        let s = fr.sigma;
        let theta = theta22(fr, spec, v, z)?;
        Ok(Pi22Report {
            pi22: pi.re,
            pi22_imag: pi.im,
            leading_pairing: lead,
            gamma0_form: g0,
            key_discrepancy: 2.0 * pi.re + g0,
            leading_discrepancy: lead - 0.5 * g0,
            dynamic_discrepancy: 2.0 * pi.re - DYNAMIC_SCALE * g0,
            remainder_scale: fgr.delta.powf(4.0 * s - 1.0) * z2 * z2,
            theta22: theta.0,
            theta22_relative: theta.1,
        })
    }

    pub fn coefficients_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Export {
            lambda: f64,
            sigma: f64,
            energies: Vec<f64>,
            upsilon11: Vec<CoefficientRow>,
            coefficients: BTreeMap<String, Vec<CoefficientRow>>,
            relation_residual: f64,
            driven_residual: f64,
            max_defect: f64,
            warnings: Vec<String>,
        }
        Ok(serde_json::to_string_pretty(&Export {
            lambda: self.frame.lambda,
            sigma: self.frame.sigma,
            energies: self.frame.energies.clone(),
            upsilon11: self.upsilon.rows(),
            coefficients: self.coefficients.rows(),
            relation_residual: self.relation_residual,
            driven_residual: self.driven_residual,
            max_defect: self.max_defect(),
            warnings: self.warnings.clone(),
        })?)
    }
}

impl Corrections for NormalForm {
    fn values(&self, z: &[C64]) -> CorrectionValues {
        self.coefficients.evaluate(z)
    }

    fn driven(&self, z: &[C64]) -> Option<Vec<C64>> {
        Some(self.driven_field(z))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Pi22Report {
    pub pi22: f64,
    /// Imaginary part of the three-term value (zero in theory).
    pub pi22_imag: f64,
    /// −2 Re⟨R₂,₀, K₂,₀⟩
    pub leading_pairing: f64,
    /// z*Γ₀z
    pub gamma0_form: f64,
    /// 2Π₂,₂ + z*Γ₀z
    pub key_discrepancy: f64,
    /// −2Re⟨R₂,₀, K₂,₀⟩ − ½z*Γ₀z
    pub leading_discrepancy: f64,
    /// 2Π₂,₂ − ¼z*Γ₀z
    pub dynamic_discrepancy: f64,
    /// δ^{4σ−1}|z|⁴
    pub remainder_scale: f64,
    pub theta22: f64,
    /// Θ₂,₂ relative to the product of the norms it pairs.
    pub theta22_relative: f64,
}

/// Θ₂,₂ = −½⟨[(−Δ+V+λ)J + iE]⁻¹P_c^lin ρ²ρ̄(i, 1), φ²ρ(−i, 1)⟩.
///
/// With H = −Δ+V+λ the system (HJ + iE)X = F splits into
/// (H − E)(x₂ − ix₁) = F₁ + iF₂ and (H + E)(x₂ + ix₁) = F₁ − iF₂.
fn theta22(fr: &ExpansionFrame, spec: &LinearSpectrum, v: &[f64], z: &[C64]) -> Result<(f64, f64)> {
    let vol = fr.vol();
    let e = fr.energies.iter().sum::<f64>() / fr.count() as f64;
    let rho = fr.rho().eval(z);
    let mut f: Vec<C64> = rho.iter().map(|r| r * r * r.conj()).collect();
    project_continuous_slice(&mut f, spec);
    let f1: Vec<C64> = f.iter().map(|x| I * x).collect();
    let f2 = f;
    let cfg = KrylovConfig {
        tol: 1e-13,
        max_iter: 3000,
        restart: 100,
    };
    let solve = |shift: f64, rhs: &[C64]| -> Result<Vec<C64>> {
        let mut u = vec![c(0.0); rhs.len()];
        let s = fr.lambda + shift;
        match solve_schrodinger(&fr.grid, v, c(s), rhs, &mut u, s.max(0.1), &cfg, "Θ₂,₂ resolvent") {
            Ok(_) => Ok(u),
            Err(Error::NonConvergence { residual, .. }) if residual < 1e-9 => Ok(u),
            Err(e) => Err(e),
        }
    };
    let plus: Vec<C64> = f1.iter().zip(&f2).map(|(a, b)| a + I * b).collect();
    let minus: Vec<C64> = f1.iter().zip(&f2).map(|(a, b)| a - I * b).collect();
    let wm = solve(-e, &plus)?;
    let wp = solve(e, &minus)?;
    let x2: Vec<C64> = wm.iter().zip(&wp).map(|(a, b)| 0.5 * (a + b)).collect();
    let x1: Vec<C64> = wm.iter().zip(&wp).map(|(a, b)| (b - a) / (2.0 * I)).collect();
    let x = Pair { u: x1, v: x2 };
    let g = Pair {
        u: fr.phi.iter().zip(&rho).map(|(p, r)| -I * p * p * r).collect(),
        v: fr.phi.iter().zip(&rho).map(|(p, r)| p * p * r).collect(),
    };
    let theta = -0.5 * x.inner(&g, vol);
    let norm = x.norm(vol) * g.norm(vol);
    Ok((theta.re, if norm > 0.0 { theta.norm() / norm } else { 0.0 }))
}

/// One row of the scaling audit.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScalingSample {
    pub lambda: f64,
    pub delta: f64,
    /// max_m ||ξ_m − ξ_m^lin||
    pub xi_deviation: f64,
    /// 1/⟨φ, ∂λφ⟩
    pub inverse_denominator: f64,
    /// max |Υ₁,₁| over the unit sphere samples
    pub upsilon: f64,
    /// largest |A⁽²⁾| coefficient of order 2
    pub a2_order2: f64,
    /// largest ||⟨x⟩⁴ JN_{m,n}||, m+n=2
    pub jn2_weighted: f64,
    /// largest ||⟨x⟩⁻⁴ R_{m,n}||, m+n=2
    pub r2_weighted: f64,
    /// largest ||⟨x⟩⁴ JN_{m,n}||, m+n=3
    pub jn3_weighted: f64,
}

fn weighted_pair_max(grid: &Arc<Grid>, p: &PairPoly, nu: i32) -> Result<f64> {
    let spec = WeightedNormSpec::new(0, nu)?;
    let mut m: f64 = 0.0;
    for key in p.keys() {
        let x = p.coefficient(&key);
        let a = weighted_norm(&Field::from_vec(grid, x.u)?, spec);
        let b = weighted_norm(&Field::from_vec(grid, x.v)?, spec);
        m = m.max((a * a + b * b).sqrt());
    }
    Ok(m)
}

/// Measures the quantities of the scaling audit at one branch point.
pub fn scaling_sample(nf: &NormalForm, delta: f64, xi_lin: &[Vec<f64>]) -> Result<ScalingSample> {
    let fr = &nf.frame;
    let vol = fr.vol();
    let xi_dev = fr
        .xi
        .iter()
        .zip(xi_lin)
        .map(|(a, b)| (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * vol).sqrt())
        .fold(0.0, f64::max);
    let nm = fr.count();
    let ups = (0..nm)
        .map(|k| {
            let mut z = vec![c(0.0); nm];
            z[k] = c(1.0);
            nf.upsilon.eval(&z).norm()
        })
        .fold(0.0, f64::max);
    let jn2 = nf.expansion.jn(2).ok_or_else(|| Error::invalid("missing order-2 block"))?;
    let jn3 = nf.expansion.jn(3).ok_or_else(|| Error::invalid("missing order-3 block"))?;
    Ok(ScalingSample {
        lambda: fr.lambda,
        delta,
        xi_deviation: xi_dev,
        inverse_denominator: 1.0 / fr.denominator,
        upsilon: ups,
        a2_order2: nf
            .coefficients
            .a2
            .terms
            .iter()
            .filter(|(k, _)| {
                let (a, b) = key_degree(k);
                a + b == 2
            })
            .fold(0.0, |m, (_, v)| m.max(v.norm())),
        jn2_weighted: weighted_pair_max(&fr.grid, &jn2, 4)?,
        r2_weighted: weighted_pair_max(&fr.grid, &nf.driven.r2, -4)?,
        jn3_weighted: weighted_pair_max(&fr.grid, &jn3, 4)?,
    })
}

/// Log-log slope of one quantity against δ.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SlopeCheck {
    pub quantity: String,
    pub expected: f64,
    pub measured: f64,
    pub passed: bool,
}

/// Fits every slope over the sweep and checks it within ±`band` of its exponent.
pub fn scaling_audit(samples: &[ScalingSample], sigma: f64, band: f64) -> Result<Vec<SlopeCheck>> {
    if samples.len() < 4 {
        return Err(Error::invalid("scaling audit needs at least four branch points"));
    }
    let dmin = samples.iter().map(|s| s.delta).fold(f64::MAX, f64::min);
    let dmax = samples.iter().map(|s| s.delta).fold(0.0, f64::max);
    if dmax < 10.0 * dmin * (1.0 - 1e-9) {
        return Err(Error::invalid("scaling audit needs δ values spanning a decade"));
    }
    type Get = fn(&ScalingSample) -> f64;
    let table: [(&str, f64, Get); 7] = [
        ("xi_deviation", 2.0 * sigma, |s| s.xi_deviation),
        ("inverse_denominator", 2.0 * sigma - 2.0, |s| s.inverse_denominator.abs()),
        ("upsilon11", 2.0 * sigma - 2.0, |s| s.upsilon),
        ("a2_order2", 2.0 * sigma - 2.0, |s| s.a2_order2),
        ("jn2_weighted", 2.0 * sigma - 1.0, |s| s.jn2_weighted),
        ("r2_weighted", 2.0 * sigma - 1.0, |s| s.r2_weighted),
        ("jn3_weighted", 2.0 * sigma - 2.0, |s| s.jn3_weighted),
    ];
    Ok(table
        .iter()
        .map(|(name, expected, get)| {
            let xs: Vec<f64> = samples.iter().map(|s| s.delta.ln()).collect();
            let ys: Vec<f64> = samples.iter().map(|s| get(s).max(1e-300).ln()).collect();
            let slope = crate::evolution::linear_fit(&xs, &ys).0;
            SlopeCheck {
                quantity: name.to_string(),
                expected: *expected,
                measured: slope,
                passed: (slope - expected).abs() <= band,
            }
        })
        .collect())
}
