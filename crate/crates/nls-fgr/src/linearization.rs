//! Linearization L = [[0, L₋], [-L₊, 0]] about a ground state, neutral modes,
//! the Riesz projection onto the discrete subspace, and the threshold check.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ground_state::{pow_abs, BranchPoint};
use crate::grid::Grid;
use crate::krylov::{gmres, jacobi_eigen, KrylovConfig};
use crate::linear_spectrum::LinearSpectrum;
use crate::ops::{apply_schrodinger, real_part, to_complex};
use crate::pair::{pair_real, Pair};
use crate::potential::{Potential, PotentialSpec};

pub const ZERO_MODE_TOL: f64 = 1e-9;
pub const GENERALIZED_MODE_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub grid: Arc<Grid>,
    pub lambda: f64,
    pub sigma: f64,
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub d2phi: Vec<f64>,
    /// V - (2σ+1) φ^{2σ}
    pub w_plus: Vec<f64>,
    /// V - φ^{2σ}
    pub w_minus: Vec<f64>,
    pub v: Vec<f64>,
    /// ∂λ ||φ||²
    pub dmass: f64,
    pub zero_mode_residual: f64,
    pub generalized_residual: f64,
}

fn l2c(grid: &Grid, v: &[C64]) -> f64 {
    (grid.cell_volume() * v.iter().map(|x| x.norm_sqr()).sum::<f64>()).sqrt()
}

fn ipr(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

pub fn build_linearization(pot: &Potential, point: &BranchPoint) -> Result<LinearizedOperator> {
    let s = point.profile.sigma;
    let phi = point.phi().to_vec();
    let w_plus: Vec<f64> = pot
        .values
        .iter()
        .zip(&phi)
        .map(|(v, p)| v - (2.0 * s + 1.0) * pow_abs(*p, 2.0 * s))
        .collect();
    let w_minus: Vec<f64> = pot
        .values
        .iter()
        .zip(&phi)
        .map(|(v, p)| v - pow_abs(*p, 2.0 * s))
        .collect();
    let mut op = LinearizedOperator {
        grid: pot.grid.clone(),
        lambda: point.lambda(),
        sigma: s,
        phi,
        dphi: point.dphi.clone(),
        d2phi: point.d2phi.clone(),
        w_plus,
        w_minus,
        v: pot.values.clone(),
        dmass: point.dmass,
        zero_mode_residual: 0.0,
        generalized_residual: 0.0,
    };
    let lm = op.apply_lminus(&to_complex(&op.phi));
    op.zero_mode_residual = l2c(&op.grid, &lm);
    let mut lp = op.apply_lplus(&to_complex(&op.dphi));
    for (a, p) in lp.iter_mut().zip(&op.phi) {
        *a += p;
    }
    op.generalized_residual = l2c(&op.grid, &lp);
    if op.zero_mode_residual > ZERO_MODE_TOL {
        return Err(Error::invalid(format!(
            "profile not converged enough: ||L₋φ|| = {:.3e}",
            op.zero_mode_residual
        )));
    }
    if op.generalized_residual > GENERALIZED_MODE_TOL {
        return Err(Error::invalid(format!(
            "||L₊∂λφ + φ|| = {:.3e} exceeds tolerance",
            op.generalized_residual
        )));
    }
    Ok(op)
}

impl LinearizedOperator {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn vol(&self) -> f64 {
        self.grid.cell_volume()
    }

    pub fn apply_lplus(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); x.len()];
        apply_schrodinger(&self.grid, &self.w_plus, C64::new(self.lambda, 0.0), x, &mut out);
        out
    }

    pub fn apply_lminus(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); x.len()];
        apply_schrodinger(&self.grid, &self.w_minus, C64::new(self.lambda, 0.0), x, &mut out);
        out
    }

    /// L (u, v) = (L₋ v, -L₊ u)
    pub fn apply(&self, x: &Pair) -> Pair {
        Pair {
            u: self.apply_lminus(&x.v),
            v: self.apply_lplus(&x.u).into_iter().map(|c| -c).collect(),
        }
    }

    /// ⟨φ, ∂λφ⟩
    pub fn phi_dphi(&self) -> f64 {
        ipr(&self.grid, &self.phi, &self.dphi)
    }

    /// Removes the ∂λφ component along the complement {⟨u, φ⟩ = 0}.
    fn deflate(&self, u: &mut [C64]) {
        let vol = self.vol();
        let c = pair_real(u, &self.phi, vol) / self.phi_dphi();
        for (a, d) in u.iter_mut().zip(&self.dphi) {
            *a -= c * d;
        }
    }

    fn apply_product(&self, x: &[C64]) -> Vec<C64> {
        self.apply_lminus(&self.apply_lplus(x))
    }
}

#[derive(Debug, Clone)]
pub struct NeutralModeSet {
    pub energies: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    /// ||L(ξ, iη) - iE(ξ, iη)|| per mode.
    pub residuals: Vec<f64>,
}

impl NeutralModeSet {
    pub fn count(&self) -> usize {
        self.energies.len()
    }

    /// Largest deviation of ⟨ξ_m, η_n⟩ from δ_mn.
    pub fn biorthogonality_residual(&self, grid: &Grid) -> f64 {
        let mut m: f64 = 0.0;
        for (i, x) in self.xi.iter().enumerate() {
            for (j, e) in self.eta.iter().enumerate() {
                let t = if i == j { 1.0 } else { 0.0 };
                m = m.max((ipr(grid, x, e) - t).abs());
            }
        }
        m
    }

    /// Frequencies treated as one degenerate class.
    pub fn is_degenerate(&self) -> bool {
        let e0 = self.energies[0];
        self.energies
            .iter()
            .all(|e| (e - e0).abs() <= 1e-6 * e0.abs())
    }

    /// Largest frequency split.
    pub fn split(&self) -> f64 {
        let max = self.energies.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.energies.iter().cloned().fold(f64::MAX, f64::min);
        max - min
    }

    pub fn eigenvector(&self, k: usize) -> Pair {
        Pair::scaled_real(&self.xi[k], C64::new(1.0, 0.0), &self.eta[k], C64::new(0.0, 1.0))
    }
}

fn product_solve(op: &LinearizedOperator, shift: f64, rhs: &[C64]) -> Result<Vec<C64>> {
    let lam = op.lambda;
    let mut x = vec![C64::new(0.0, 0.0); rhs.len()];
    let cfg = KrylovConfig {
        tol: 1e-13,
        max_iter: 3000,
        restart: 100,
    };
    let g = op.grid.clone();
    let res = gmres(
        |a, out| {
            let y = op.apply_product(a);
            for i in 0..a.len() {
                out[i] = y[i] - shift * a[i];
            }
        },
        |a, out| {
            out.copy_from_slice(a);
            g.apply_real_symbol(out, |k2| 1.0 / ((k2 + lam) * (k2 + lam) - shift));
        },
        rhs,
        &mut x,
        &cfg,
        "neutral-mode inverse iteration",
    );
    match res {
        Ok(_) => Ok(x),
        // near-singular shifted solves stagnate once the eigen-direction dominates
        Err(Error::NonConvergence { residual, .. }) if residual < 1e-3 => Ok(x),
        Err(e) => Err(e),
    }
}

/// Neutral modes from the reduced problem L₋L₊ ξ = E² ξ on {⟨ξ, φ⟩ = 0}.
pub fn neutral_modes(op: &LinearizedOperator, spec: &LinearSpectrum) -> Result<NeutralModeSet> {
    let vol = op.vol();
    let mut block: Vec<Vec<C64>> = spec.xi_lin().iter().map(|x| to_complex(x)).collect();
    for b in block.iter_mut() {
        op.deflate(b);
    }
    let lam = op.lambda;
    let mut vals = rayleigh_ritz_weighted(op, &mut block)?;
    // Inverse iteration with a small negative shift selects the lowest
    // non-zero part of the spectrum before Rayleigh shifts take over.
    for _ in 0..16 {
        let before = vals.clone();
        block = inverse_step(op, -0.05 * lam * lam, &block)?;
        vals = rayleigh_ritz_weighted(op, &mut block)?;
        let change = vals.iter().zip(&before).map(|(a, b)| (a - b).abs() / a.abs()).fold(0.0, f64::max);
        if change < 1e-4 {
            break;
        }
    }
    let mut converged = false;
    let mut last = f64::INFINITY;
    for _it in 0..40 {
        let previous = last;
        let shift = vals.iter().sum::<f64>() / vals.len() as f64;
        let shift = shift * (1.0 - 1e-5);
        block = inverse_step(op, shift, &block)?;
        vals = rayleigh_ritz_weighted(op, &mut block)?;
        let mut worst: f64 = 0.0;
        for (b, &e2) in block.iter().zip(&vals) {
            let r = op.apply_product(b);
            let res: Vec<C64> = r.iter().zip(b).map(|(a, x)| a - e2 * x).collect();
            worst = worst.max(l2c(&op.grid, &res) / l2c(&op.grid, b));
        }
        last = worst;
        if worst < 1e-11 || (worst < 1e-8 && worst > 0.5 * previous) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::no_convergence("neutral-mode eigensolve", 40, last));
    }
    let mut xi: Vec<Vec<f64>> = block.iter().map(|b| real_part(b)).collect();
    let mut energies = Vec::new();
    for &e2 in &vals {
        if e2 <= 0.0 {
            return Err(Error::Assumption(format!("no neutral mode: E² = {e2:.3e} <= 0")));
        }
        let e = e2.sqrt();
        if 2.0 * e <= lam {
            return Err(Error::Assumption(format!(
                "resonance condition fails: 2E = {:.6} <= λ = {lam:.6}",
                2.0 * e
            )));
        }
        if e >= lam {
            return Err(Error::Assumption(format!("E = {e:.6} is not below the threshold λ = {lam:.6}")));
        }
        energies.push(e);
    }
    // sign convention: ξ aligned with the linear excited state
    for (x, xl) in xi.iter_mut().zip(spec.xi_lin()) {
        if ipr(&op.grid, x, xl) < 0.0 {
            x.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let mut eta: Vec<Vec<f64>> = xi
        .iter()
        .zip(&energies)
        .map(|(x, e)| {
            real_part(&op.apply_lplus(&to_complex(x)))
                .into_iter()
                .map(|v| v / e)
                .collect()
        })
        .collect();
    normalize_pairs(&op.grid, &mut xi, &mut eta, &energies)?;
    let set = NeutralModeSet {
        residuals: Vec::new(),
        energies,
        xi,
        eta,
    };
    let residuals = (0..set.count())
        .map(|k| {
            let x = set.eigenvector(k);
            let lx = op.apply(&x);
            let target = x.scaled(C64::new(0.0, set.energies[k]));
            lx.sub(&target).norm(vol)
        })
        .collect();
    Ok(NeutralModeSet { residuals, ..set })
}

fn inverse_step(op: &LinearizedOperator, shift: f64, block: &[Vec<C64>]) -> Result<Vec<Vec<C64>>> {
    let mut next = Vec::with_capacity(block.len());
    for b in block {
        let mut y = product_solve(op, shift, b)?;
        op.deflate(&mut y);
        let ny = l2c(&op.grid, &y);
        y.iter_mut().for_each(|c| *c /= ny);
        next.push(y);
    }
    Ok(next)
}

/// Rotates the block to Ritz vectors of L₋L₊ in the L₊-weighted pairing
/// and returns the Ritz values E².
fn rayleigh_ritz_weighted(op: &LinearizedOperator, block: &mut [Vec<C64>]) -> Result<Vec<f64>> {
    let m = block.len();
    let vol = op.vol();
    let lp: Vec<Vec<C64>> = block.iter().map(|b| op.apply_lplus(b)).collect();
    let prod: Vec<Vec<C64>> = lp.iter().map(|v| op.apply_lminus(v)).collect();
    let mut a = vec![vec![0.0; m]; m];
    let mut bm = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            a[i][j] = crate::grid::dot(&prod[j], &lp[i]).re * vol;
            bm[i][j] = crate::grid::dot(&block[j], &lp[i]).re * vol;
        }
    }
    for i in 0..m {
        for j in i + 1..m {
            let s = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = s;
            a[j][i] = s;
            let t = 0.5 * (bm[i][j] + bm[j][i]);
            bm[i][j] = t;
            bm[j][i] = t;
        }
    }
    // B = C Cᵀ, then solve C⁻¹ A C⁻ᵀ y = μ y
    let c = cholesky(&bm).ok_or_else(|| {
        Error::invalid("L₊ is not positive on the mode subspace (neutral-mode ansatz failed)")
    })?;
    let ci = lower_inverse(&c);
    let mut s = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                for l in 0..m {
                    acc += ci[i][k] * a[k][l] * ci[j][l];
                }
            }
            s[i][j] = acc;
        }
    }
    let (vals, vecs) = jacobi_eigen(s);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&x, &y| vals[x].partial_cmp(&vals[y]).unwrap());
    let n = block[0].len();
    let mut out = vec![vec![C64::new(0.0, 0.0); n]; m];
    for (col, &idx) in order.iter().enumerate() {
        // coefficient vector = C⁻ᵀ y
        for k in 0..m {
            let mut coef = 0.0;
            for i in 0..m {
                coef += ci[i][k] * vecs[i][idx];
            }
            for (o, b) in out[col].iter_mut().zip(&block[k]) {
                *o += coef * b;
            }
        }
    }
    block.clone_from_slice(&out);
    Ok(order.iter().map(|&i| vals[i]).collect())
}

fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let m = a.len();
    let mut l = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

fn lower_inverse(l: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = l.len();
    let mut inv = vec![vec![0.0; m]; m];
    for col in 0..m {
        for i in 0..m {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[i][k] * inv[k][col];
            }
            inv[i][col] = s / l[i][i];
        }
    }
    inv
}

/// Enforces ⟨ξ_m, η_n⟩ = δ_mn, using M^{-1/2} within a degenerate class.
fn normalize_pairs(grid: &Grid, xi: &mut [Vec<f64>], eta: &mut [Vec<f64>], energies: &[f64]) -> Result<()> {
    let m = xi.len();
    let degenerate = energies
        .iter()
        .all(|e| (e - energies[0]).abs() <= 1e-6 * energies[0].abs());
    if m > 1 && degenerate {
        let mut mm = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                mm[i][j] = 0.5 * (ipr(grid, &xi[i], &eta[j]) + ipr(grid, &xi[j], &eta[i]));
            }
        }
        let (vals, vecs) = jacobi_eigen(mm);
        if vals.iter().any(|v| *v <= 0.0) {
            return Err(Error::invalid("mode pairing matrix is not positive"));
        }
        let mut t = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in 0..m {
                t[i][j] = (0..m).map(|k| vecs[i][k] * vecs[j][k] / vals[k].sqrt()).sum();
            }
        }
        let n = xi[0].len();
        let mut nx = vec![vec![0.0; n]; m];
        let mut ne = vec![vec![0.0; n]; m];
        for j in 0..m {
            for i in 0..m {
                for p in 0..n {
                    nx[j][p] += t[i][j] * xi[i][p];
                    ne[j][p] += t[i][j] * eta[i][p];
                }
            }
        }
        xi.clone_from_slice(&nx);
        eta.clone_from_slice(&ne);
    } else {
        for (x, e) in xi.iter_mut().zip(eta.iter_mut()) {
            let s = ipr(grid, x, e);
            if s <= 0.0 {
                return Err(Error::invalid("⟨ξ, η⟩ is not positive"));
            }
            let r = s.sqrt();
            x.iter_mut().for_each(|v| *v /= r);
            e.iter_mut().for_each(|v| *v /= r);
        }
    }
    Ok(())
}

/// Riesz projection onto the generalized kernel and the neutral modes.
#[derive(Debug, Clone)]
pub struct RieszProjector {
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    pub dmass: f64,
    pub xi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub vol: f64,
}

pub fn riesz_projections(op: &LinearizedOperator, modes: &NeutralModeSet) -> Result<RieszProjector> {
    if op.dmass.abs() < 1e-12 {
        return Err(Error::invalid("degenerate branch: ∂λ||φ||² vanishes"));
    }
    Ok(RieszProjector {
        phi: op.phi.clone(),
        dphi: op.dphi.clone(),
        dmass: op.dmass,
        xi: modes.xi.clone(),
        eta: modes.eta.clone(),
        vol: op.vol(),
    })
}

impl RieszProjector {
    /// P_d f = (2/∂λN)[(0,φ)⟨f₂,∂λφ⟩ + (∂λφ,0)⟨f₁,φ⟩] + Σ (ξ⟨f₁,η⟩, η⟨f₂,ξ⟩)
    pub fn apply_pd(&self, f: &Pair) -> Pair {
        let vol = self.vol;
        let c = 2.0 / self.dmass;
        let a = pair_real(&f.v, &self.dphi, vol) * c;
        let b = pair_real(&f.u, &self.phi, vol) * c;
        let mut out = Pair::scaled_real(&self.dphi, b, &self.phi, a);
        for (x, e) in self.xi.iter().zip(&self.eta) {
            let p = pair_real(&f.u, e, vol);
            let q = pair_real(&f.v, x, vol);
            for (o, xv) in out.u.iter_mut().zip(x) {
                *o += p * xv;
            }
            for (o, ev) in out.v.iter_mut().zip(e) {
                *o += q * ev;
            }
        }
        out
    }

    pub fn apply_pc(&self, f: &Pair) -> Pair {
        f.sub(&self.apply_pd(f))
    }

    pub fn rank(&self) -> usize {
        2 + 2 * self.xi.len()
    }

    /// ‖P_d(P_d f) − P_d f‖ / ‖P_d f‖.
    pub fn idempotency_residual(&self, f: &Pair) -> f64 {
        let p = self.apply_pd(f);
        let n = p.norm(self.vol);
        if n == 0.0 {
            return 0.0;
        }
        self.apply_pd(&p).sub(&p).norm(self.vol) / n
    }
}

/// Outcome of the zero-energy resonance test.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ThresholdReport {
    pub checked: bool,
    pub determinant: f64,
    pub resonance_suspected: bool,
    pub message: String,
}

/// Zero-energy Jost matching test for -Δ + V in one dimension.
pub fn check_threshold_resonance(pot: &Potential) -> ThresholdReport {
    if pot.grid.dim() != 1 {
        return ThresholdReport {
            checked: false,
            determinant: f64::NAN,
            resonance_suspected: false,
            message: "unchecked: threshold test is one-dimensional only".into(),
        };
    }
    let det = zero_energy_determinant(&pot.spec, pot.grid.lbox());
    let suspected = det < 1e-6;
    ThresholdReport {
        checked: true,
        determinant: det,
        resonance_suspected: suspected,
        message: if suspected {
            "resonance suspected: a bounded zero-energy solution exists".into()
        } else {
            "no threshold resonance".into()
        },
    }
}

/// Integrates -u'' + V u = 0 from the left with u = 1, u' = 0 and returns
/// |b| / sqrt(a² + b²) for the right asymptote u ≈ a + b x.
pub fn zero_energy_determinant(spec: &PotentialSpec, half_width: f64) -> f64 {
    let v = |x: f64| spec.eval(x * x);
    let steps = ((2.0 * half_width) / 2e-3).ceil() as usize;
    let h = 2.0 * half_width / steps as f64;
    let mut x = -half_width;
    let mut u = 1.0;
    let mut du = 0.0;
    for _ in 0..steps {
        let f = |x: f64, u: f64, du: f64| (du, v(x) * u);
        let k1 = f(x, u, du);
        let k2 = f(x + 0.5 * h, u + 0.5 * h * k1.0, du + 0.5 * h * k1.1);
        let k3 = f(x + 0.5 * h, u + 0.5 * h * k2.0, du + 0.5 * h * k2.1);
        let k4 = f(x + h, u + h * k3.0, du + h * k3.1);
        u += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        du += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        x += h;
    }
    let b = du;
    let a = u - x * du;
    b.abs() / (a * a + b * b).sqrt()
}
