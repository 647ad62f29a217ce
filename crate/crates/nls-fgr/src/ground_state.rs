//! Nonlinear ground states φ^λ bifurcating from the linear ground state,
//! their λ-derivatives, and the mass curve N(λ) = ||φ^λ||².

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::krylov::{gmres, KrylovConfig};
use crate::linear_spectrum::LinearSpectrum;
use crate::ops::{apply_multiplier, apply_schrodinger, real_part, to_complex};
use crate::potential::Potential;

pub const PROFILE_TOL: f64 = 1e-10;

/// Relative residual accepted when a tight linear solve stagnates at rounding level.
pub(crate) const STAGNATION_ACCEPT: f64 = 1e-9;

/// |u|^p with the sign of u kept, so that pow_signed(u, 1) = u.
pub fn pow_signed(u: f64, p: f64) -> f64 {
    if p == 1.0 {
        u
    } else if p == 2.0 {
        u * u.abs()
    } else {
        u.signum() * u.abs().powf(p)
    }
}

/// |u|^p
pub fn pow_abs(u: f64, p: f64) -> f64 {
    if p == 2.0 {
        u * u
    } else {
        u.abs().powf(p)
    }
}

#[derive(Debug, Clone)]
pub struct GroundStateProfile {
    pub lambda: f64,
    pub sigma: f64,
    pub phi: Vec<f64>,
    pub delta: f64,
    pub residual: f64,
    pub newton_iterations: usize,
}

fn l2(grid: &Grid, v: &[f64]) -> f64 {
    (grid.cell_volume() * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

fn ip(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// (-Δ + V + λ) φ - |φ|^{2σ} φ
pub fn profile_residual(pot: &Potential, lambda: f64, sigma: f64, phi: &[f64]) -> Vec<f64> {
    let x = to_complex(phi);
    let mut out = vec![C64::new(0.0, 0.0); x.len()];
    apply_schrodinger(&pot.grid, &pot.values, C64::new(lambda, 0.0), &x, &mut out);
    out.iter()
        .zip(phi)
        .map(|(o, &p)| o.re - pow_abs(p, 2.0 * sigma) * p)
        .collect()
}

/// Solves L u = f for a real Schrödinger operator -Δ + λ + w(x) by preconditioned GMRES.
pub(crate) fn solve_real(
    grid: &Arc<Grid>,
    w: &[f64],
    lambda: f64,
    f: &[f64],
    tol: f64,
    what: &str,
) -> Result<Vec<f64>> {
    let b = to_complex(f);
    let mut x = vec![C64::new(0.0, 0.0); b.len()];
    let cfg = KrylovConfig {
        tol,
        max_iter: 4000,
        restart: 100,
    };
    let pshift = lambda.max(0.1);
    let g = grid.clone();
    let g2 = grid.clone();
    match gmres(
        |a, out| apply_schrodinger(&g, w, C64::new(lambda, 0.0), a, out),
        |a, out| apply_multiplier(&g2, a, out, |k2| 1.0 / (k2 + pshift)),
        &b,
        &mut x,
        &cfg,
        what,
    ) {
        Ok(_) => Ok(real_part(&x)),
        Err(Error::NonConvergence { residual, .. }) if residual <= STAGNATION_ACCEPT => Ok(real_part(&x)),
        Err(e) => Err(e),
    }
}

/// Leading-order amplitude |e0 + λ|^{1/2σ} (∫ φ_lin^{2σ+2})^{-1/2σ}.
pub fn predicted_delta(spec: &LinearSpectrum, lambda: f64, sigma: f64) -> f64 {
    let grid = &spec.grid;
    let q: f64 = grid.cell_volume()
        * spec
            .phi_lin()
            .iter()
            .map(|p| pow_abs(*p, 2.0 * sigma + 2.0))
            .sum::<f64>();
    (spec.e0() + lambda).abs().powf(0.5 / sigma) * q.powf(-0.5 / sigma)
}

/// Newton iteration for the positive profile at frequency λ.
pub fn solve_ground_state(
    pot: &Potential,
    spec: &LinearSpectrum,
    lambda: f64,
    sigma: f64,
    init: &[f64],
) -> Result<GroundStateProfile> {
    if sigma < 1.0 {
        return Err(Error::invalid(format!("sigma = {sigma} must be >= 1")));
    }
    if spec.e0() + lambda <= 0.0 {
        return Err(Error::invalid(format!(
            "lambda = {lambda} must exceed -e0 = {} for the focusing branch",
            -spec.e0()
        )));
    }
    if init.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("initial guess is identically zero"));
    }
    let grid = pot.grid.clone();
    let mut phi = init.to_vec();
    let mut res = profile_residual(pot, lambda, sigma, &phi);
    let mut rnorm = l2(&grid, &res);
    let mut iters = 0;
    while rnorm > PROFILE_TOL {
        if iters >= 40 {
            return Err(Error::no_convergence("ground-state Newton", iters, rnorm));
        }
        let w: Vec<f64> = pot
            .values
            .iter()
            .zip(&phi)
            .map(|(v, p)| v - (2.0 * sigma + 1.0) * pow_abs(*p, 2.0 * sigma))
            .collect();
        let tol = if rnorm > 1e-4 { 1e-6 } else { 1e-12 };
        let step = solve_real(&grid, &w, lambda, &res, tol, "ground-state Newton step")?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = phi.iter().zip(&step).map(|(p, s)| p - t * s).collect();
            let tr = profile_residual(pot, lambda, sigma, &trial);
            let tn = l2(&grid, &tr);
            if tn < rnorm || t < 1e-3 {
                phi = trial;
                res = tr;
                rnorm = tn;
                break;
            }
            t *= 0.5;
        }
        iters += 1;
    }
    let pmax = phi.iter().cloned().fold(0.0f64, f64::max);
    let pmin = phi.iter().cloned().fold(0.0f64, f64::min);
    if pmax <= 0.0 || pmin < -1e-8 * pmax {
        return Err(Error::invalid(format!(
            "non-ground branch: converged profile changes sign (min {pmin:.3e}, max {pmax:.3e})"
        )));
    }
    let delta = ip(&grid, &phi, spec.phi_lin());
    Ok(GroundStateProfile {
        lambda,
        sigma,
        phi,
        delta,
        residual: rnorm,
        newton_iterations: iters,
    })
}

/// Measured and predicted bifurcation amplitudes.
pub fn amplitude_law(profile: &GroundStateProfile, spec: &LinearSpectrum) -> (f64, f64) {
    (
        profile.delta,
        predicted_delta(spec, profile.lambda, profile.sigma),
    )
}

/// Solves L₊ ∂λφ = -φ and L₊ ∂²λφ = (2σ+1)2σ φ^{2σ-1}(∂λφ)² - 2∂λφ.
pub fn profile_derivatives(
    pot: &Potential,
    profile: &GroundStateProfile,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = pot.grid.clone();
    let s = profile.sigma;
    let phi = &profile.phi;
    let w: Vec<f64> = pot
        .values
        .iter()
        .zip(phi)
        .map(|(v, p)| v - (2.0 * s + 1.0) * pow_abs(*p, 2.0 * s))
        .collect();
    let rhs: Vec<f64> = phi.iter().map(|p| -p).collect();
    let d1 = solve_real(&grid, &w, profile.lambda, &rhs, 1e-14, "L+ solve for dphi")?;
    let rhs2: Vec<f64> = phi
        .iter()
        .zip(&d1)
        .map(|(p, d)| (2.0 * s + 1.0) * 2.0 * s * pow_signed(*p, 2.0 * s - 1.0) * d * d - 2.0 * d)
        .collect();
    let d2 = solve_real(&grid, &w, profile.lambda, &rhs2, 1e-14, "L+ solve for d2phi")?;
    let check = l2(&grid, &d1);
    if !check.is_finite() || check > 1e12 * l2(&grid, phi) {
        return Err(Error::invalid("L+ is numerically singular (fold of the branch?)"));
    }
    Ok((d1, d2))
}

/// A tabulated point of the branch.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub profile: GroundStateProfile,
    pub dphi: Vec<f64>,
    pub d2phi: Vec<f64>,
    pub mass: f64,
    pub dmass: f64,
}

impl BranchPoint {
    pub fn lambda(&self) -> f64 {
        self.profile.lambda
    }

    pub fn phi(&self) -> &[f64] {
        &self.profile.phi
    }
}

#[derive(Debug, Clone)]
pub struct GroundStateBranch {
    pub grid: Arc<Grid>,
    pub sigma: f64,
    pub points: Vec<BranchPoint>,
    pub potential_hash: String,
}

fn make_point(pot: &Potential, profile: GroundStateProfile) -> Result<BranchPoint> {
    let (dphi, d2phi) = profile_derivatives(pot, &profile)?;
    let grid = &pot.grid;
    let mass = ip(grid, &profile.phi, &profile.phi);
    let dmass = 2.0 * ip(grid, &profile.phi, &dphi);
    Ok(BranchPoint {
        profile,
        dphi,
        d2phi,
        mass,
        dmass,
    })
}

/// Solves one branch point from the linear guess.
pub fn branch_point(
    pot: &Potential,
    spec: &LinearSpectrum,
    lambda: f64,
    sigma: f64,
) -> Result<BranchPoint> {
    let d = predicted_delta(spec, lambda, sigma);
    let init: Vec<f64> = spec.phi_lin().iter().map(|p| d * p).collect();
    let prof = solve_ground_state(pot, spec, lambda, sigma, &init)?;
    make_point(pot, prof)
}

/// Natural-parameter continuation through the sorted list `lambdas`.
///
/// Intermediate steps are inserted whenever Newton needs more than eight
/// iterations from the tangent predictor.
pub fn build_branch(
    pot: &Potential,
    spec: &LinearSpectrum,
    sigma: f64,
    lambdas: &[f64],
) -> Result<GroundStateBranch> {
    if lambdas.is_empty() {
        return Err(Error::invalid("empty lambda list"));
    }
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let mut points: Vec<BranchPoint> = Vec::new();
    let mut current = branch_point(pot, spec, sorted[0], sigma)?;
    points.push(current.clone());
    for &target in &sorted[1..] {
        let mut lam = current.lambda();
        let mut step = target - lam;
        while lam < target {
            let next = (lam + step).min(target);
            let dl = next - lam;
            let guess: Vec<f64> = current
                .phi()
                .iter()
                .zip(&current.dphi)
                .zip(&current.d2phi)
                .map(|((p, d), dd)| p + dl * d + 0.5 * dl * dl * dd)
                .collect();
            match solve_ground_state(pot, spec, next, sigma, &guess) {
                Ok(prof) if prof.newton_iterations <= 8 => {
                    current = make_point(pot, prof)?;
                    lam = next;
                }
                _ if step.abs() > 1e-9 => {
                    step *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
                Ok(prof) => {
                    current = make_point(pot, prof)?;
                    lam = next;
                }
            }
        }
        points.push(current.clone());
    }
    let branch = GroundStateBranch {
        grid: pot.grid.clone(),
        sigma,
        points,
        potential_hash: pot.hash(),
    };
    branch.validate()?;
    Ok(branch)
}

/// (λ, N, ∂λN) row of the mass table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MassRow {
    pub lambda: f64,
    pub mass: f64,
    pub dmass: f64,
}

impl GroundStateBranch {
    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda()).collect()
    }

    pub fn range(&self) -> (f64, f64) {
        (
            self.points.first().unwrap().lambda(),
            self.points.last().unwrap().lambda(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if w[1].lambda() <= w[0].lambda() {
                return Err(Error::invalid("branch lambdas are not strictly increasing"));
            }
            if w[1].mass <= w[0].mass {
                return Err(Error::invalid("outside stable branch: N(λ) is not monotone"));
            }
        }
        for p in &self.points {
            if p.dmass <= 0.0 {
                return Err(Error::invalid(format!(
                    "outside stable branch: dN/dλ = {:.3e} at λ = {}",
                    p.dmass,
                    p.lambda()
                )));
            }
        }
        Ok(())
    }

    pub fn mass_curve(&self) -> Result<Vec<MassRow>> {
        if self.points.len() < 3 {
            return Err(Error::invalid("mass curve needs at least three branch points"));
        }
        self.validate()?;
        Ok(self
            .points
            .iter()
            .map(|p| MassRow {
                lambda: p.lambda(),
                mass: p.mass,
                dmass: p.dmass,
            })
            .collect())
    }

    fn bracket(&self, lambda: f64) -> Result<usize> {
        let (a, b) = self.range();
        if lambda < a - 1e-12 || lambda > b + 1e-12 || self.points.len() < 2 {
            return Err(Error::invalid(format!(
                "λ = {lambda} outside the stored branch [{a}, {b}]"
            )));
        }
        let mut i = 0;
        while i + 2 < self.points.len() && self.points[i + 1].lambda() < lambda {
            i += 1;
        }
        Ok(i)
    }

    /// Cubic Hermite interpolation of N(λ) using the tabulated slopes.
    pub fn mass_at(&self, lambda: f64) -> Result<f64> {
        let i = self.bracket(lambda)?;
        let (p, q) = (&self.points[i], &self.points[i + 1]);
        Ok(hermite(p.lambda(), q.lambda(), p.mass, q.mass, p.dmass, q.dmass, lambda).0)
    }

    pub fn dmass_at(&self, lambda: f64) -> Result<f64> {
        let i = self.bracket(lambda)?;
        let (p, q) = (&self.points[i], &self.points[i + 1]);
        Ok(hermite(p.lambda(), q.lambda(), p.mass, q.mass, p.dmass, q.dmass, lambda).1)
    }

    /// Inverse of the mass curve by safeguarded Newton on the interpolant.
    pub fn lambda_of_mass(&self, mass: f64) -> Result<f64> {
        let first = &self.points[0];
        let last = self.points.last().unwrap();
        if mass < first.mass - 1e-14 || mass > last.mass + 1e-14 {
            return Err(Error::invalid(format!(
                "mass {mass} outside the branch range [{}, {}]",
                first.mass, last.mass
            )));
        }
        let mut i = 0;
        while i + 2 < self.points.len() && self.points[i + 1].mass < mass {
            i += 1;
        }
        let (p, q) = (&self.points[i], &self.points[i + 1]);
        let (mut lo, mut hi) = (p.lambda(), q.lambda());
        let mut x = lo + (hi - lo) * (mass - p.mass) / (q.mass - p.mass);
        for _ in 0..100 {
            let (f, df) = hermite(p.lambda(), q.lambda(), p.mass, q.mass, p.dmass, q.dmass, x);
            let g = f - mass;
            if g.abs() <= 1e-15 * mass.abs().max(1.0) {
                break;
            }
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let nx = x - g / df;
            x = if nx > lo && nx < hi { nx } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        Ok(x)
    }

    /// Cubic Hermite interpolation of φ^λ (with ∂λφ as slopes) and of ∂λφ (with ∂²λφ).
    pub fn interpolate(&self, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let i = self.bracket(lambda)?;
        let (p, q) = (&self.points[i], &self.points[i + 1]);
        let (a, b) = (p.lambda(), q.lambda());
        let n = p.phi().len();
        let mut phi = vec![0.0; n];
        let mut dphi = vec![0.0; n];
        let c = hermite_basis(a, b, lambda);
        for j in 0..n {
            phi[j] = c.0 * p.phi()[j] + c.1 * q.phi()[j] + c.2 * p.dphi[j] + c.3 * q.dphi[j];
            dphi[j] = c.0 * p.dphi[j] + c.1 * q.dphi[j] + c.2 * p.d2phi[j] + c.3 * q.d2phi[j];
        }
        Ok((phi, dphi))
    }

    pub fn phi_field(&self, i: usize) -> Field {
        Field::from_real(&self.grid, self.points[i].phi()).expect("branch grid")
    }

    /// Writes the branch cache: fields plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            let names = [format!("phi_{i:03}"), format!("dphi_{i:03}"), format!("d2phi_{i:03}")];
            for (name, data) in names.iter().zip([p.phi(), &p.dphi[..], &p.d2phi[..]]) {
                Field::from_real(&self.grid, data)?.save(&dir.join(name))?;
            }
            entries.push(CacheEntry {
                lambda: p.lambda(),
                mass: p.mass,
                dmass: p.dmass,
                delta: p.profile.delta,
                residual: p.profile.residual,
                phi: names[0].clone(),
                dphi: names[1].clone(),
                d2phi: names[2].clone(),
            });
        }
        let manifest = BranchManifest {
            lambdas: self.lambdas(),
            sigma: self.sigma,
            potential_hash: self.potential_hash.clone(),
            grid: self.grid.spec(),
            entries,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    /// Loads a cache written by [`GroundStateBranch::save`], checking the
    /// potential hash, σ and every profile residual.
    pub fn load(dir: &Path, pot: &Potential, sigma: f64) -> Result<GroundStateBranch> {
        let manifest: BranchManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.potential_hash != pot.hash() || manifest.sigma != sigma {
            return Err(Error::invalid("branch cache does not match potential or sigma"));
        }
        let grid = pot.grid.clone();
        let mut points = Vec::new();
        for e in &manifest.entries {
            let phi = Field::load_on(&grid, &dir.join(&e.phi))?.re();
            let dphi = Field::load_on(&grid, &dir.join(&e.dphi))?.re();
            let d2phi = Field::load_on(&grid, &dir.join(&e.d2phi))?.re();
            let res = l2(&grid, &profile_residual(pot, e.lambda, sigma, &phi));
            if !(res <= 10.0 * PROFILE_TOL) {
                return Err(Error::invalid(format!("cached profile at λ = {} is corrupted", e.lambda)));
            }
            points.push(BranchPoint {
                profile: GroundStateProfile {
                    lambda: e.lambda,
                    sigma,
                    phi,
                    delta: e.delta,
                    residual: res,
                    newton_iterations: 0,
                },
                dphi,
                d2phi,
                mass: e.mass,
                dmass: e.dmass,
            });
        }
        let b = GroundStateBranch {
            grid,
            sigma,
            points,
            potential_hash: manifest.potential_hash,
        };
        b.validate()?;
        Ok(b)
    }
}

/// Loads the cache when valid, otherwise rebuilds and rewrites it. The flag
/// reports whether the cache was used.
pub fn cached_branch(
    dir: &Path,
    pot: &Potential,
    spec: &LinearSpectrum,
    sigma: f64,
    lambdas: &[f64],
) -> Result<(GroundStateBranch, bool)> {
    if let Ok(b) = GroundStateBranch::load(dir, pot, sigma) {
        let want: Vec<f64> = {
            let mut v = lambdas.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            v
        };
        if b.lambdas() == want {
            return Ok((b, true));
        }
    }
    let b = build_branch(pot, spec, sigma, lambdas)?;
    b.save(dir)?;
    Ok((b, false))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheEntry {
    lambda: f64,
    mass: f64,
    dmass: f64,
    delta: f64,
    residual: f64,
    phi: String,
    dphi: String,
    d2phi: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BranchManifest {
    lambdas: Vec<f64>,
    sigma: f64,
    potential_hash: String,
    grid: crate::grid::GridSpec,
    entries: Vec<CacheEntry>,
}

pub fn branch_cache_dir(root: &Path) -> PathBuf {
    root.join("branch")
}

/// Hermite basis weights (h00, h01, h10, h11) on [a, b] at x, slopes scaled by b - a.
fn hermite_basis(a: f64, b: f64, x: f64) -> (f64, f64, f64, f64) {
    let h = b - a;
    let t = (x - a) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (
        2.0 * t3 - 3.0 * t2 + 1.0,
        -2.0 * t3 + 3.0 * t2,
        (t3 - 2.0 * t2 + t) * h,
        (t3 - t2) * h,
    )
}

/// Hermite cubic value and derivative.
pub(crate) fn hermite(a: f64, b: f64, fa: f64, fb: f64, da: f64, db: f64, x: f64) -> (f64, f64) {
    let c = hermite_basis(a, b, x);
    let h = b - a;
    let t = (x - a) / h;
    let v = c.0 * fa + c.1 * fb + c.2 * da + c.3 * db;
    let d = ((6.0 * t * t - 6.0 * t) * fa + (-6.0 * t * t + 6.0 * t) * fb) / h
        + (3.0 * t * t - 4.0 * t + 1.0) * da
        + (3.0 * t * t - 2.0 * t) * db;
    (v, d)
}
