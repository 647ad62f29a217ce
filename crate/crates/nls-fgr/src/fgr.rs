//! Fermi Golden Rule damping of the neutral modes.
//!
//! Every matrix here is quadratic in (z, z̄), so it is stored as a coefficient
//! tensor `t[k][l][a][b]` with entry (k, l) equal to Σ t[k][l][a][b] z_a z̄_b.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ground_state::pow_abs;
use crate::krylov::KrylovConfig;
use crate::linear_spectrum::{project_continuous_slice, LinearSpectrum};
use crate::linearization::{LinearizedOperator, NeutralModeSet, RieszProjector};
use crate::ops::solve_schrodinger;
use crate::pair::Pair;
use crate::resolvent::{
    limiting_absorption_resolve, u_diagonalization_residual, MatrixResolvent, ResolventConfig, ScalarOperator,
};

/// A matrix-valued form M(z) with M^{kl}(z) = Σ_ab t[k][l][a][b] z_a z̄_b.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct QuadraticTensor {
    pub n: usize,
    /// Flattened `[k][l][a][b]` as (re, im) pairs.
    pub coeffs: Vec<[f64; 2]>,
}

impl QuadraticTensor {
    pub fn zeros(n: usize) -> Self {
        QuadraticTensor {
            n,
            coeffs: vec![[0.0, 0.0]; n * n * n * n],
        }
    }

    fn idx(&self, k: usize, l: usize, a: usize, b: usize) -> usize {
        ((k * self.n + l) * self.n + a) * self.n + b
    }

    pub fn get(&self, k: usize, l: usize, a: usize, b: usize) -> C64 {
        let c = self.coeffs[self.idx(k, l, a, b)];
        C64::new(c[0], c[1])
    }

    pub fn set(&mut self, k: usize, l: usize, a: usize, b: usize, v: C64) {
        let i = self.idx(k, l, a, b);
        self.coeffs[i] = [v.re, v.im];
    }

    /// The matrix M(z), row-major.
    pub fn matrix(&self, z: &[C64]) -> Vec<Vec<C64>> {
        let n = self.n;
        let mut m = vec![vec![C64::new(0.0, 0.0); n]; n];
        for (k, row) in m.iter_mut().enumerate() {
            for (l, e) in row.iter_mut().enumerate() {
                for a in 0..n {
                    for b in 0..n {
                        *e += self.get(k, l, a, b) * z[a] * z[b].conj();
                    }
                }
            }
        }
        m
    }

    /// z* M(z) z.
    pub fn form(&self, z: &[C64]) -> C64 {
        let m = self.matrix(z);
        let mut s = C64::new(0.0, 0.0);
        for k in 0..self.n {
            for l in 0..self.n {
                s += z[k].conj() * m[k][l] * z[l];
            }
        }
        s
    }

    /// M(z) z.
    pub fn apply(&self, z: &[C64]) -> Vec<C64> {
        self.matrix(z)
            .iter()
            .map(|row| row.iter().zip(z).map(|(m, x)| m * x).sum())
            .collect()
    }

    /// Coefficients of the adjoint form M(z)*.
    pub fn adjoint(&self) -> QuadraticTensor {
        let mut out = QuadraticTensor::zeros(self.n);
        for k in 0..self.n {
            for l in 0..self.n {
                for a in 0..self.n {
                    for b in 0..self.n {
                        out.set(k, l, a, b, self.get(l, k, b, a).conj());
                    }
                }
            }
        }
        out
    }

    /// a·self + b·other.
    pub fn combine(&self, a: f64, other: &QuadraticTensor, b: f64) -> QuadraticTensor {
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| [a * x[0] + b * y[0], a * x[1] + b * y[1]])
            .collect();
        QuadraticTensor { n: self.n, coeffs }
    }

    pub fn scaled(&self, s: f64) -> QuadraticTensor {
        self.combine(s, self, 0.0)
    }

    /// Largest coefficient modulus.
    pub fn max_abs(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|c| c[0].hypot(c[1]))
            .fold(0.0, f64::max)
    }
}

/// Source field of mode pair (k, m) per unit z_m.
pub fn pair_source(phi: &[f64], sigma: f64, modes: &NeutralModeSet, k: usize, m: usize) -> Pair {
    let (xk, ek) = (&modes.xi[k], &modes.eta[k]);
    let (xm, em) = (&modes.xi[m], &modes.eta[m]);
    let n = phi.len();
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        let p = pow_abs(phi[i], 2.0 * sigma - 1.0);
        u.push(C64::new(0.0, -sigma * p * (xm[i] * ek[i] + em[i] * xk[i])));
        let d = -sigma * p * (3.0 * xm[i] * xk[i] - em[i] * ek[i]) - 2.0 * sigma * (sigma - 1.0) * p * xm[i] * xk[i];
        v.push(C64::new(d, 0.0));
    }
    Pair { u, v }
}

/// The source vectors G_k(z), k = 1..N.
pub fn source_vectors(phi: &[f64], sigma: f64, modes: &NeutralModeSet, z: &[C64]) -> Result<Vec<Pair>> {
    let nm = modes.count();
    if z.len() != nm {
        return Err(Error::invalid(format!(
            "z has {} components but there are {} neutral modes",
            z.len(),
            nm
        )));
    }
    let n = phi.len();
    Ok((0..nm)
        .map(|k| {
            let mut g = Pair::zeros(n);
            for (m, &zm) in z.iter().enumerate() {
                g.axpy(zm, &pair_source(phi, sigma, modes, k, m));
            }
            g
        })
        .collect())
}

/// Extrapolation record of one resolvent solve.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SolveDiagnostics {
    pub label: String,
    pub shift: f64,
    pub eps: Vec<f64>,
    pub regularized_errors: Vec<f64>,
    pub defect: f64,
    pub iterations: usize,
    /// ||(L + iμ)X - P_c G|| / ||P_c G|| for matrix solves.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FgrData {
    pub lambda: f64,
    pub sigma: f64,
    pub delta: f64,
    pub phi_sup: f64,
    pub energies: Vec<f64>,
    pub near_degenerate: bool,
    pub z: QuadraticTensor,
    pub gamma: QuadraticTensor,
    pub lambda_form: QuadraticTensor,
    pub gamma0: QuadraticTensor,
    pub u_residual: f64,
    pub solves: Vec<SolveDiagnostics>,
    pub lbox: f64,
    pub n: usize,
}

impl FgrData {
    /// z* Γ(z, z̄) z (real up to rounding).
    pub fn gamma_form(&self, z: &[C64]) -> f64 {
        self.gamma.form(z).re
    }

    pub fn gamma0_form(&self, z: &[C64]) -> f64 {
        self.gamma0.form(z).re
    }

    pub fn max_defect(&self) -> f64 {
        self.solves.iter().map(|s| s.defect).fold(0.0, f64::max)
    }

    /// ||Γ - Γ*|| and ||Λ + Λ*|| at coefficient level.
    pub fn symmetry_residuals(&self) -> (f64, f64) {
        let g = self.gamma.combine(1.0, &self.gamma.adjoint(), -1.0).max_abs();
        let l = self.lambda_form.combine(1.0, &self.lambda_form.adjoint(), 1.0).max_abs();
        (g, l)
    }

    /// ||-Γ + Λ + Z|| at coefficient level.
    pub fn decomposition_residual(&self) -> f64 {
        self.gamma
            .combine(-1.0, &self.lambda_form, 1.0)
            .combine(1.0, &self.z, 1.0)
            .max_abs()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Tensors rescaled by ¼.
    ///
    /// With the quadratic source G_k taken as displayed, the resonant part of
    /// the cubic nonlinearity that drives (L + 2iE)R₂,₀ equals ¼ Σ z_k G_k,
    /// so the damping actually felt by ż is −¼Γz + ¼Λz and the soliton mass
    /// grows at the rate ¼ z*Γ₀z. This is the normalization against which
    /// trajectories of the full equation are compared.
    pub fn dynamic(&self) -> FgrData {
        let mut out = self.clone();
        out.z = self.z.scaled(DYNAMIC_SCALE);
        out.gamma = self.gamma.scaled(DYNAMIC_SCALE);
        out.lambda_form = self.lambda_form.scaled(DYNAMIC_SCALE);
        out.gamma0 = self.gamma0.scaled(DYNAMIC_SCALE);
        out
    }
}

/// Ratio between the dynamic and the displayed FGR normalizations.
pub const DYNAMIC_SCALE: f64 = 0.25;

/// Linear excited states rotated to match the nonlinear modes ξ_k.
pub fn aligned_linear_modes(spec: &LinearSpectrum, modes: &NeutralModeSet) -> Vec<Vec<f64>> {
    let vol = spec.grid.cell_volume();
    let basis = spec.xi_lin();
    let mut out: Vec<Vec<f64>> = Vec::new();
    for xi in &modes.xi {
        let mut v = vec![0.0; xi.len()];
        for b in basis {
            let c: f64 = xi.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * vol;
            v.iter_mut().zip(b).for_each(|(a, y)| *a += c * y);
        }
        for prev in &out {
            let c: f64 = v.iter().zip(prev).map(|(x, y)| x * y).sum::<f64>() * vol;
            v.iter_mut().zip(prev).for_each(|(a, y)| *a -= c * y);
        }
        let nrm = (v.iter().map(|x| x * x).sum::<f64>() * vol).sqrt();
        v.iter_mut().for_each(|a| *a /= nrm);
        out.push(v);
    }
    out
}

/// Inputs of the leading form, all on the linear problem.
pub struct LeadingInputs<'a> {
    pub spec: &'a LinearSpectrum,
    pub v: &'a [f64],
    pub lambda: f64,
    pub sigma: f64,
    pub delta: f64,
    pub energies: &'a [f64],
    pub xi_lin: &'a [Vec<f64>],
}

/// Tensor of the leading form Γ₀ together with its solve records.
///
/// With F_ab = φ_lin^{2σ-1} ξ_a ξ_b and R_ab the outgoing resolvent of
/// -Δ + V + λ at E_a + E_b, Γ₀^{kl} = c/(2i)[⟨R h_l, h_k⟩ - conj⟨R h_k, h_l⟩]
/// where h_l = Σ_a z_a F_al and c = 2σ²(σ+1)²δ^{4σ-2}.
pub fn gamma0_tensor(inp: &LeadingInputs, cfg: &ResolventConfig) -> Result<(QuadraticTensor, Vec<SolveDiagnostics>)> {
    let grid = &inp.spec.grid;
    let vol = grid.cell_volume();
    let n = inp.energies.len();
    let s = inp.sigma;
    let c = 2.0 * s * s * (s + 1.0).powi(2) * inp.delta.powf(4.0 * s - 2.0);
    let plin: Vec<f64> = inp.spec.phi_lin().iter().map(|p| pow_abs(*p, 2.0 * s - 1.0)).collect();
    let op = ScalarOperator::new(grid, inp.v.to_vec(), inp.lambda);
    let f = |a: usize, b: usize| -> Vec<C64> {
        (0..plin.len())
            .map(|i| C64::new(plin[i] * inp.xi_lin[a][i] * inp.xi_lin[b][i], 0.0))
            .collect()
    };
    let mut solved = vec![vec![Vec::new(); n]; n];
    let mut diags = Vec::new();
    for a in 0..n {
        for b in a..n {
            let shift = inp.energies[a] + inp.energies[b];
            if shift <= inp.lambda {
                return Err(Error::Assumption(format!(
                    "resonance E_a + E_b = {shift:.6} does not reach the continuum threshold λ = {:.6}",
                    inp.lambda
                )));
            }
            let mut rhs = f(a, b);
            project_continuous_slice(&mut rhs, inp.spec);
            let r = limiting_absorption_resolve(&op, shift, &rhs, 0.5 * shift, cfg)?;
            diags.push(SolveDiagnostics {
                label: format!("leading ({a},{b})"),
                shift,
                eps: r.eps.clone(),
                regularized_errors: r.regularized_errors.clone(),
                defect: r.defect,
                iterations: r.iterations,
                residual: None,
            });
            solved[a][b] = r.value.clone();
            solved[b][a] = r.value;
        }
    }
    let ip = |u: &[C64], g: &[C64]| -> C64 { u.iter().zip(g).map(|(x, y)| x * y.conj()).sum::<C64>() * vol };
    let fs: Vec<Vec<Vec<C64>>> = (0..n).map(|a| (0..n).map(|b| f(a, b)).collect()).collect();
    let mut t = QuadraticTensor::zeros(n);
    let half_i = C64::new(0.0, 0.5);
    for k in 0..n {
        for l in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let p = ip(&solved[a][l], &fs[b][k]);
                    let q = ip(&solved[b][k], &fs[a][l]).conj();
                    // c/(2i)(p - q) = -c·(i/2)(p - q)
                    t.set(k, l, a, b, -half_i * c * (p - q));
                }
            }
        }
    }
    Ok((t, diags))
}

/// Evaluates z*Γ₀z directly for one z.
pub fn gamma0_form(inp: &LeadingInputs, z: &[C64], cfg: &ResolventConfig) -> Result<f64> {
    if z.iter().all(|x| x.norm() == 0.0) {
        return Ok(0.0);
    }
    let (t, _) = gamma0_tensor(inp, cfg)?;
    Ok(t.form(z).re)
}

/// Builds Z, Γ, Λ and Γ₀ on the branch point behind `op`.
///
/// Degenerate frequencies give the resonance 2E for every pair; distinct
/// frequencies use E_l + E_m per pair, which reduces to the former when the
/// split vanishes.
pub fn gamma_matrices(
    op: &LinearizedOperator,
    modes: &NeutralModeSet,
    proj: &RieszProjector,
    spec: &LinearSpectrum,
    delta: f64,
    cfg: &ResolventConfig,
) -> Result<FgrData> {
    let n = modes.count();
    let vol = op.vol();
    let res = MatrixResolvent::new(op, proj, cfg.clone());
    let mut solves = Vec::new();
    let mut driven = vec![vec![Pair::zeros(0); n]; n];
    let mut tests = vec![vec![Pair::zeros(0); n]; n];
    for l in 0..n {
        for m in 0..n {
            let g = pair_source(&op.phi, op.sigma, modes, l, m);
            let mu = modes.energies[l] + modes.energies[m];
            let r = res.resolve(mu, &g, modes.energies[l])?;
            let x = Pair::from_stacked(&r.value);
            solves.push(SolveDiagnostics {
                label: format!("matrix ({l},{m})"),
                shift: mu,
                eps: r.eps.clone(),
                regularized_errors: r.regularized_errors.clone(),
                defect: r.defect,
                iterations: r.iterations,
                residual: Some(res.residual(mu, &Pair::from_stacked(r.best()), &g)),
            });
            driven[l][m] = x;
            tests[l][m] = proj.apply_pc(&g).apply_j().scaled(C64::new(0.0, 1.0));
        }
    }
    let mut zt = QuadraticTensor::zeros(n);
    for k in 0..n {
        for l in 0..n {
            for a in 0..n {
                for b in 0..n {
                    zt.set(k, l, a, b, -driven[l][a].inner(&tests[k][b], vol));
                }
            }
        }
    }
    let adj = zt.adjoint();
    let gamma = zt.combine(0.5, &adj, 0.5);
    let lambda_form = adj.combine(0.5, &zt, -0.5);

    let xi_lin = aligned_linear_modes(spec, modes);
    let inputs = LeadingInputs {
        spec,
        v: &op.v,
        lambda: op.lambda,
        sigma: op.sigma,
        delta,
        energies: &modes.energies,
        xi_lin: &xi_lin,
    };
    let (gamma0, d0) = gamma0_tensor(&inputs, cfg)?;
    solves.extend(d0);
    let phi_sup = op.phi.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    Ok(FgrData {
        lambda: op.lambda,
        sigma: op.sigma,
        delta,
        phi_sup,
        energies: modes.energies.clone(),
        near_degenerate: !modes.is_degenerate(),
        z: zt,
        gamma,
        lambda_form,
        gamma0,
        u_residual: u_diagonalization_residual(),
        solves,
        lbox: op.grid.lbox(),
        n: op.grid.n(),
    })
}

/// Near-degenerate variant; warns through the returned flag when the split
/// exceeds `split_max`.
pub fn gamma_near_degenerate(
    op: &LinearizedOperator,
    modes: &NeutralModeSet,
    proj: &RieszProjector,
    spec: &LinearSpectrum,
    delta: f64,
    split_max: f64,
    cfg: &ResolventConfig,
) -> Result<(FgrData, Option<String>)> {
    let warning = (modes.split() > split_max).then(|| {
        format!(
            "outside near-degenerate theory: split {:.3e} exceeds {:.3e}",
            modes.split(),
            split_max
        )
    });
    let data = gamma_matrices(op, modes, proj, spec, delta, cfg)?;
    Ok((data, warning))
}

/// Random complex vector with independent standard normal parts.
pub fn random_z(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|_| {
            let a: f64 = rng.sample(rand::distributions::Standard);
            let b: f64 = rng.sample(rand::distributions::Standard);
            C64::new(2.0 * a - 1.0, 2.0 * b - 1.0)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PositivityCertificate {
    pub samples: usize,
    pub seed: u64,
    /// min over samples of z*Γz / (||φ||∞^{4σ-2} |z|⁴).
    pub c1: f64,
    /// max of the same ratio.
    pub c1_max: f64,
    pub min_form: f64,
    /// min and max of z*Γ₀z / (||φ||∞^{4σ-2} |z|⁴).
    pub c0_range: (f64, f64),
}

/// Samples z*Γz on random z; a non-positive sample is a convention error.
pub fn certify_positivity(data: &FgrData, samples: usize, seed: u64) -> Result<PositivityCertificate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = data.energies.len();
    let scale = data.phi_sup.powf(4.0 * data.sigma - 2.0);
    let mut c1 = f64::INFINITY;
    let mut c1_max: f64 = 0.0;
    let mut min_form = f64::INFINITY;
    let mut c0 = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..samples {
        let z = random_z(&mut rng, n);
        let z2: f64 = z.iter().map(|x| x.norm_sqr()).sum();
        let g = data.gamma_form(&z);
        let g0 = data.gamma0_form(&z);
        if !(g > 0.0) {
            return Err(Error::Assumption(format!(
                "sign convention error: z*Γz = {g:.3e} is not positive at z = {z:?}"
            )));
        }
        let r = g / (scale * z2 * z2);
        c1 = c1.min(r);
        c1_max = c1_max.max(r);
        min_form = min_form.min(g);
        let r0 = g0 / (scale * z2 * z2);
        c0 = (c0.0.min(r0), c0.1.max(r0));
    }
    Ok(PositivityCertificate {
        samples,
        seed,
        c1,
        c1_max,
        min_form,
        c0_range: c0,
    })
}

/// Result of the below-threshold vanishing identity.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct VanishingIdentity {
    /// The prefactored quantity, exactly zero in theory.
    pub value: f64,
    /// Re⟨i A⁻¹ f, f⟩ / (||A⁻¹ f|| ||f||), independent of the prefactor.
    pub relative_bracket: f64,
    /// Natural scale δ^{4σ-2}|z|⁴ of the quantity.
    pub scale: f64,
}

/// Re⟨i (A + c)⁻¹ P f, f⟩ for A = -Δ + V + λ and c above the spectrum bottom,
/// returned with its normalization ||(A + c)⁻¹ P f|| ||f||.
pub fn below_threshold_bracket(
    grid: &Arc<Grid>,
    spec: &LinearSpectrum,
    v: &[f64],
    shift: f64,
    f: &[C64],
) -> Result<(f64, f64)> {
    let vol = grid.cell_volume();
    let mut rhs = f.to_vec();
    project_continuous_slice(&mut rhs, spec);
    let mut u = vec![C64::new(0.0, 0.0); rhs.len()];
    let cfg = KrylovConfig {
        tol: 1e-14,
        max_iter: 2000,
        restart: 80,
    };
    match solve_schrodinger(grid, v, C64::new(shift, 0.0), &rhs, &mut u, shift.max(0.1), &cfg, "below-threshold resolvent") {
        Ok(_) => {}
        Err(Error::NonConvergence { residual, .. }) if residual < 1e-10 => {}
        Err(e) => return Err(e),
    }
    let ip: C64 = u.iter().zip(f).map(|(a, b)| a * b.conj()).sum::<C64>() * vol;
    let nu = (u.iter().map(|a| a.norm_sqr()).sum::<f64>() * vol).sqrt();
    let nf = (f.iter().map(|a| a.norm_sqr()).sum::<f64>() * vol).sqrt();
    Ok(((C64::new(0.0, 1.0) * ip).re, nu * nf))
}

/// H₂₂ = -2δ^{4σ-2}σ²(σ-1)² Re⟨i(-Δ+V+λ+2E)⁻¹ P f, f⟩ with f = φ_lin^{2σ-1}(z·ξ_lin)².
pub fn h22_identity_check(inp: &LeadingInputs, z: &[C64]) -> Result<VanishingIdentity> {
    let s = inp.sigma;
    let e = inp.energies.iter().sum::<f64>() / inp.energies.len() as f64;
    let f = leading_source(inp, z);
    let (bracket, norm) = below_threshold_bracket(&inp.spec.grid, inp.spec, inp.v, inp.lambda + 2.0 * e, &f)?;
    let pref = -2.0 * inp.delta.powf(4.0 * s - 2.0) * s * s * (s - 1.0).powi(2);
    let z2: f64 = z.iter().map(|x| x.norm_sqr()).sum();
    Ok(VanishingIdentity {
        value: pref * bracket,
        relative_bracket: if norm > 0.0 { bracket / norm } else { 0.0 },
        scale: inp.delta.powf(4.0 * s - 2.0) * z2 * z2,
    })
}

/// φ_lin^{2σ-1} (z·ξ_lin)².
pub fn leading_source(inp: &LeadingInputs, z: &[C64]) -> Vec<C64> {
    let p = inp.spec.phi_lin();
    (0..p.len())
        .map(|i| {
            let zx: C64 = z.iter().zip(inp.xi_lin).map(|(a, x)| a * x[i]).sum();
            pow_abs(p[i], 2.0 * inp.sigma - 1.0) * zx * zx
        })
        .collect()
}

/// Leading-order limit of Σ z_k G_k: -2σδ^{2σ-1} φ_lin^{2σ-1}(z·ξ_lin)² (i, σ).
pub fn leading_source_pair(inp: &LeadingInputs, z: &[C64]) -> Pair {
    let s = inp.sigma;
    let f = leading_source(inp, z);
    let c = -2.0 * s * inp.delta.powf(2.0 * s - 1.0);
    Pair {
        u: f.iter().map(|x| C64::new(0.0, c) * x).collect(),
        v: f.iter().map(|x| c * s * x).collect(),
    }
}

/// Σ_k z_k G_k(z).
pub fn contracted_source(phi: &[f64], sigma: f64, modes: &NeutralModeSet, z: &[C64]) -> Result<Pair> {
    let g = source_vectors(phi, sigma, modes, z)?;
    let mut out = Pair::zeros(phi.len());
    for (zk, gk) in z.iter().zip(&g) {
        out.axpy(*zk, gk);
    }
    Ok(out)
}

/// Re⟨i A⁻¹ v, v⟩ relative to ||A⁻¹ v|| ||v|| for a real v; zero for self-adjoint A.
pub fn self_adjoint_bracket(
    grid: &Arc<Grid>,
    spec: &LinearSpectrum,
    v: &[f64],
    shift: f64,
    f: &[f64],
) -> Result<f64> {
    let fc: Vec<C64> = f.iter().map(|x| C64::new(*x, 0.0)).collect();
    let (b, n) = below_threshold_bracket(grid, spec, v, shift, &fc)?;
    Ok(if n > 0.0 { b / n } else { 0.0 })
}
