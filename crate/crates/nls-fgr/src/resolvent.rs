//! Free and perturbed resolvents near the continuous spectrum.
//!
//! The free resolvent (-Δ - ζ)^{-1} is available in two flavors. In one
//! dimension the outgoing Green function (i/2κ) e^{iκ|x|} is truncated at
//! twice the box half-length and convolved on a doubled periodic grid, which
//! reproduces the whole-line resolvent exactly for fields supported in the
//! box. In any dimension the plain periodic symbol 1/(|k|² - ζ) is available,
//! with a floor on |Im ζ| that keeps it above the box level spacing.
//!
//! Perturbed problems are written in Lippmann–Schwinger form
//! u + R₀(W u) = R₀ f and solved by GMRES, so the localized potential never
//! sees the box boundary.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::krylov::{gmres, KrylovConfig, KrylovStats};
use crate::linearization::{LinearizedOperator, RieszProjector};
use crate::pair::Pair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FreeKernel {
    /// Exact truncated kernel in one dimension, periodic otherwise.
    #[default]
    Auto,
    Exact,
    Periodic,
}

/// Boundary value of the spectral parameter when Im ζ = 0 on the continuum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// ζ = s + i0: outgoing waves e^{+i√s|x|}.
    Upper,
    /// ζ = s - i0: incoming waves.
    Lower,
}

impl Side {
    fn sign(self) -> f64 {
        match self {
            Side::Upper => 1.0,
            Side::Lower => -1.0,
        }
    }
}

/// Smallest |Im ζ| allowed with the periodic kernel at energy s > 0:
/// four level spacings times the group velocity 2√s.
pub fn periodic_eps_floor(grid: &Grid, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    4.0 * (PI / grid.lbox()) * 2.0 * s.sqrt()
}

/// (e^{w} - 1) / w, accurate near w = 0.
fn phi1(w: C64) -> C64 {
    if w.norm() < 1e-3 {
        C64::new(1.0, 0.0) + w / 2.0 + w * w / 6.0 + w * w * w / 24.0
    } else {
        (w.exp() - 1.0) / w
    }
}

/// Fourier transform of the truncated Green function (i/2κ) e^{iκ|x|} 1_{|x|≤D}.
fn truncated_kernel_hat(kappa: C64, k: f64, d: f64) -> C64 {
    let i = C64::new(0.0, 1.0);
    let psi = |a: C64| i * d * phi1(i * a * d);
    (psi(kappa + k) + psi(kappa - k)) / (2.0 * kappa)
}

/// The free resolvent (-Δ - ζ)^{-1} for one spectral parameter.
#[derive(Clone)]
pub struct FreeResolvent {
    grid: Arc<Grid>,
    kind: FreeKernel,
    zeta: C64,
    kappa: C64,
    symbol: Vec<C64>,
    fwd: Option<Arc<dyn Fft<f64>>>,
    inv: Option<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FreeResolvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FreeResolvent")
            .field("kind", &self.kind)
            .field("zeta", &self.zeta)
            .field("kappa", &self.kappa)
            .finish()
    }
}

impl FreeResolvent {
    pub fn new(grid: &Arc<Grid>, zeta: C64, side: Side, kind: FreeKernel) -> Result<FreeResolvent> {
        let kind = match kind {
            FreeKernel::Auto if grid.dim() == 1 => FreeKernel::Exact,
            FreeKernel::Auto => FreeKernel::Periodic,
            FreeKernel::Exact if grid.dim() != 1 => {
                return Err(Error::invalid("the exact free kernel is one-dimensional only"))
            }
            k => k,
        };
        if zeta.norm() < 1e-14 {
            return Err(Error::invalid("free resolvent requested at the threshold ζ = 0"));
        }
        match kind {
            FreeKernel::Exact => Self::exact(grid, zeta, side),
            _ => Self::periodic(grid, zeta, side),
        }
    }

    fn exact(grid: &Arc<Grid>, zeta: C64, side: Side) -> Result<FreeResolvent> {
        let mut kappa = zeta.sqrt();
        if zeta.im == 0.0 && zeta.re > 0.0 {
            kappa = C64::new(side.sign() * zeta.re.sqrt(), 0.0);
        } else if kappa.im < 0.0 {
            kappa = -kappa;
        }
        let n = grid.n();
        let m = 2 * n;
        let l = grid.lbox();
        let d = 2.0 * l;
        let dk = 2.0 * PI / (2.0 * d);
        let symbol = (0..m)
            .map(|j| {
                let jj = if j <= n { j as f64 } else { j as f64 - m as f64 };
                truncated_kernel_hat(kappa, jj * dk, d) / m as f64
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(FreeResolvent {
            grid: grid.clone(),
            kind: FreeKernel::Exact,
            zeta,
            kappa,
            symbol,
            fwd: Some(planner.plan_fft_forward(m)),
            inv: Some(planner.plan_fft_inverse(m)),
        })
    }

    fn periodic(grid: &Arc<Grid>, zeta: C64, side: Side) -> Result<FreeResolvent> {
        let mut z = zeta;
        let floor = periodic_eps_floor(grid, z.re);
        if z.re > 0.0 && z.im.abs() < floor {
            let s = if z.im != 0.0 { z.im.signum() } else { side.sign() };
            z.im = s * floor;
        }
        let symbol = grid.k_squared().iter().map(|&k2| 1.0 / (k2 - z)).collect();
        Ok(FreeResolvent {
            grid: grid.clone(),
            kind: FreeKernel::Periodic,
            zeta: z,
            kappa: z.sqrt(),
            symbol,
            fwd: None,
            inv: None,
        })
    }

    pub fn kind(&self) -> FreeKernel {
        self.kind
    }

    /// Spectral parameter actually used (after any periodic floor).
    pub fn zeta(&self) -> C64 {
        self.zeta
    }

    pub fn kappa(&self) -> C64 {
        self.kappa
    }

    pub fn apply(&self, f: &[C64]) -> Vec<C64> {
        match self.kind {
            FreeKernel::Exact => {
                let n = f.len();
                let mut buf = vec![C64::new(0.0, 0.0); 2 * n];
                buf[..n].copy_from_slice(f);
                let fwd = self.fwd.as_ref().expect("exact kernel plan");
                let inv = self.inv.as_ref().expect("exact kernel plan");
                fwd.process(&mut buf);
                for (b, s) in buf.iter_mut().zip(&self.symbol) {
                    *b *= s;
                }
                inv.process(&mut buf);
                buf.truncate(n);
                buf
            }
            _ => {
                let mut out = f.to_vec();
                self.grid.forward(&mut out);
                for (o, s) in out.iter_mut().zip(&self.symbol) {
                    *o *= s;
                }
                self.grid.inverse(&mut out);
                out
            }
        }
    }
}

/// Settings shared by all limiting-absorption solves.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResolventConfig {
    pub kernel: FreeKernel,
    /// ε values as fractions of the energy scale, largest first.
    pub schedule: [f64; 3],
    pub defect_tol: f64,
    pub krylov_tol: f64,
    pub max_iter: usize,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        ResolventConfig {
            kernel: FreeKernel::Auto,
            schedule: [4e-2, 2e-2, 1e-2],
            defect_tol: 1e-2,
            krylov_tol: 1e-12,
            max_iter: 600,
        }
    }
}

impl ResolventConfig {
    fn krylov(&self) -> KrylovConfig {
        KrylovConfig {
            tol: self.krylov_tol,
            max_iter: self.max_iter,
            restart: 120,
        }
    }

    fn uses_exact(&self, grid: &Grid) -> bool {
        match self.kernel {
            FreeKernel::Exact => true,
            FreeKernel::Auto => grid.dim() == 1,
            FreeKernel::Periodic => false,
        }
    }
}

/// Result of an ε → 0 extrapolation.
#[derive(Debug, Clone)]
pub struct LimitingResult {
    /// Richardson-extrapolated limit.
    pub value: Vec<C64>,
    /// Solution at ε = 0 when the kernel permits it.
    pub direct: Option<Vec<C64>>,
    /// Absolute ε values used, largest first.
    pub eps: Vec<f64>,
    /// Relative local distance of each regularized solution from the reference limit.
    pub regularized_errors: Vec<f64>,
    /// Relative extrapolation defect in the local norm.
    pub defect: f64,
    pub iterations: usize,
}

impl LimitingResult {
    /// The most accurate available limit.
    pub fn best(&self) -> &[C64] {
        self.direct.as_deref().unwrap_or(&self.value)
    }
}

/// Weight (1 + |x|²)^{-1} of the local norm in which ε-limits are compared.
/// Outgoing tails converge only locally, so unweighted norms are not used.
pub fn local_weight(grid: &Grid) -> Vec<f64> {
    grid.radius_squared().into_iter().map(|r2| 1.0 / (1.0 + r2)).collect()
}

fn wnorm(v: &[C64], w: &[f64]) -> f64 {
    let n = w.len();
    v.iter()
        .enumerate()
        .map(|(i, x)| x.norm_sqr() * w[i % n] * w[i % n])
        .sum::<f64>()
        .sqrt()
}

fn rel_diff(a: &[C64], b: &[C64], w: &[f64]) -> f64 {
    let d: Vec<C64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    wnorm(&d, w) / wnorm(b, w).max(1e-300)
}

/// Runs `solve` on the ε schedule (and at ε = 0 if `direct` is set) and
/// extrapolates with the three-point Richardson formula.
fn extrapolate<F>(
    mut solve: F,
    eps: [f64; 3],
    direct: bool,
    weight: &[f64],
    tol: f64,
    what: &str,
) -> Result<LimitingResult>
where
    F: FnMut(f64) -> Result<(Vec<C64>, usize)>,
{
    let mut iterations = 0;
    let mut sols = Vec::with_capacity(3);
    for &e in &eps {
        let (u, it) = solve(e)?;
        iterations += it;
        sols.push(u);
    }
    let (u4, u2, u1) = (&sols[0], &sols[1], &sols[2]);
    let ratio = eps[0] / eps[2];
    let value: Vec<C64> = if (ratio - 4.0).abs() < 1e-9 && (eps[0] / eps[1] - 2.0).abs() < 1e-9 {
        (0..u1.len()).map(|i| (8.0 * u1[i] - 6.0 * u2[i] + u4[i]) / 3.0).collect()
    } else {
        // general quadratic extrapolation in ε through three points
        let (a, b, c) = (eps[0], eps[1], eps[2]);
        let la = b * c / ((a - b) * (a - c));
        let lb = a * c / ((b - a) * (b - c));
        let lc = a * b / ((c - a) * (c - b));
        (0..u1.len()).map(|i| la * u4[i] + lb * u2[i] + lc * u1[i]).collect()
    };
    let direct_sol = if direct {
        let (u, it) = solve(0.0)?;
        iterations += it;
        Some(u)
    } else {
        None
    };
    let (defect, reference): (f64, &[C64]) = match &direct_sol {
        Some(d) => (rel_diff(&value, d, weight), d),
        None => {
            let two: Vec<C64> = (0..u1.len()).map(|i| 2.0 * u1[i] - u2[i]).collect();
            (rel_diff(&two, &value, weight), &value)
        }
    };
    let regularized_errors = sols.iter().map(|u| rel_diff(u, reference, weight)).collect();
    if !(defect <= tol) {
        return Err(Error::NonConvergence {
            what: format!("limiting absorption not converged ({what})"),
            iterations,
            residual: defect,
        });
    }
    Ok(LimitingResult {
        value,
        direct: direct_sol,
        eps: eps.to_vec(),
        regularized_errors,
        defect,
        iterations,
    })
}

/// Scalar operator A = -Δ + w(x) + c with a localized w.
#[derive(Debug, Clone)]
pub struct ScalarOperator {
    pub grid: Arc<Grid>,
    pub w: Vec<f64>,
    pub c: f64,
}

impl ScalarOperator {
    pub fn new(grid: &Arc<Grid>, w: Vec<f64>, c: f64) -> ScalarOperator {
        ScalarOperator {
            grid: grid.clone(),
            w,
            c,
        }
    }

    /// Solves (A - shift - iε)u = f; `side` fixes the boundary value at ε = 0.
    pub fn solve(&self, shift: f64, eps: f64, side: Side, f: &[C64], cfg: &ResolventConfig) -> Result<(Vec<C64>, KrylovStats)> {
        let zeta = C64::new(shift - self.c, side.sign() * eps);
        let r0 = FreeResolvent::new(&self.grid, zeta, side, cfg.kernel)?;
        let rhs = r0.apply(f);
        let mut u = rhs.clone();
        let w = &self.w;
        let stats = gmres(
            |x, out| {
                let wx: Vec<C64> = x.iter().zip(w).map(|(a, b)| a * b).collect();
                let r = r0.apply(&wx);
                for i in 0..x.len() {
                    out[i] = x[i] + r[i];
                }
            },
            |x, out| out.copy_from_slice(x),
            &rhs,
            &mut u,
            &cfg.krylov(),
            "scalar resolvent",
        )?;
        Ok((u, stats))
    }
}

/// Limiting absorption (A - shift - i0)^{-1} f via the ε schedule.
///
/// `energy_scale` multiplies the schedule fractions.
pub fn limiting_absorption_resolve(
    op: &ScalarOperator,
    shift: f64,
    f: &[C64],
    energy_scale: f64,
    cfg: &ResolventConfig,
) -> Result<LimitingResult> {
    let eps = cfg.schedule.map(|e| e * energy_scale.abs());
    let direct = cfg.uses_exact(&op.grid);
    extrapolate(
        |e| op.solve(shift, e, Side::Upper, f, cfg).map(|(u, s)| (u, s.iterations)),
        eps,
        direct,
        &local_weight(&op.grid),
        cfg.defect_tol,
        "scalar",
    )
}

/// The unitary U = (1/√2)[[1, i], [i, 1]] with U* J U = iσ₃.
pub fn u_matrix() -> [[C64; 2]; 2] {
    let s = 1.0 / 2f64.sqrt();
    [
        [C64::new(s, 0.0), C64::new(0.0, s)],
        [C64::new(0.0, s), C64::new(s, 0.0)],
    ]
}

/// max |U* J U - iσ₃| over entries.
pub fn u_diagonalization_residual() -> f64 {
    let u = u_matrix();
    let j = [
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(-1.0, 0.0), C64::new(0.0, 0.0)],
    ];
    let mut ju = [[C64::new(0.0, 0.0); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            ju[r][c] = (0..2).map(|k| j[r][k] * u[k][c]).sum();
        }
    }
    let target = [
        [C64::new(0.0, 1.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
    ];
    let mut worst: f64 = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            let v: C64 = (0..2).map(|k| u[k][r].conj() * ju[k][c]).sum();
            worst = worst.max((v - target[r][c]).norm());
        }
    }
    worst
}

/// Solver for (L + iμ - ε)X = P_c F on the continuous subspace of L.
///
/// The free part (-Δ + λ)J is diagonalized by U into -i(-Δ+λ+μ+iε)^{-1} and
/// i(-Δ+λ-μ-iε)^{-1}; the potential part and a multiple of P_d (which
/// commutes with L and removes the discrete eigenvalues) go to the
/// Lippmann–Schwinger side.
pub struct MatrixResolvent<'a> {
    pub op: &'a LinearizedOperator,
    pub proj: &'a RieszProjector,
    pub cfg: ResolventConfig,
}

impl<'a> MatrixResolvent<'a> {
    pub fn new(op: &'a LinearizedOperator, proj: &'a RieszProjector, cfg: ResolventConfig) -> Self {
        MatrixResolvent { op, proj, cfg }
    }

    /// True when iμ puts one of the diagonal blocks inside the continuum.
    pub fn in_continuum(&self, mu: f64) -> bool {
        mu.abs() > self.op.lambda
    }

    /// One regularized solve; returns X ∈ range(P_c).
    pub fn solve(&self, mu: f64, eps: f64, f: &Pair) -> Result<(Pair, KrylovStats)> {
        let lam = self.op.lambda;
        let grid = &self.op.grid;
        let r1 = FreeResolvent::new(grid, C64::new(-lam - mu, -eps), Side::Lower, self.cfg.kernel)?;
        let r2 = FreeResolvent::new(grid, C64::new(mu - lam, eps), Side::Upper, self.cfg.kernel)?;
        let n = self.op.len();
        let s = 1.0 / 2f64.sqrt();
        let i = C64::new(0.0, 1.0);
        let shift_pd = C64::new(self.op.lambda.max(1.0), 0.0);
        let apply_r0 = |x: &[C64]| -> Vec<C64> {
            let (a, b) = x.split_at(n);
            let y1: Vec<C64> = (0..n).map(|k| (a[k] - i * b[k]) * s).collect();
            let y2: Vec<C64> = (0..n).map(|k| (-i * a[k] + b[k]) * s).collect();
            let z1: Vec<C64> = r1.apply(&y1).into_iter().map(|v| -i * v).collect();
            let z2: Vec<C64> = r2.apply(&y2).into_iter().map(|v| i * v).collect();
            let mut out = vec![C64::new(0.0, 0.0); 2 * n];
            for k in 0..n {
                out[k] = (z1[k] + i * z2[k]) * s;
                out[n + k] = (i * z1[k] + z2[k]) * s;
            }
            out
        };
        let pcf = self.proj.apply_pc(f);
        let rhs = apply_r0(&pcf.to_stacked());
        let mut x = rhs.clone();
        let wp = &self.op.w_plus;
        let wm = &self.op.w_minus;
        let proj = self.proj;
        let stats = gmres(
            |v, out| {
                let (a, b) = v.split_at(n);
                let pd = proj.apply_pd(&Pair {
                    u: a.to_vec(),
                    v: b.to_vec(),
                });
                let mut kx = vec![C64::new(0.0, 0.0); 2 * n];
                for k in 0..n {
                    kx[k] = wm[k] * b[k] + shift_pd * pd.u[k];
                    kx[n + k] = -wp[k] * a[k] + shift_pd * pd.v[k];
                }
                let r = apply_r0(&kx);
                for k in 0..2 * n {
                    out[k] = v[k] + r[k];
                }
            },
            |v, out| out.copy_from_slice(v),
            &rhs,
            &mut x,
            &self.cfg.krylov(),
            "matrix resolvent",
        )?;
        Ok((Pair::from_stacked(&x), stats))
    }

    /// (L + iμ - 0)^{-1} P_c F, extrapolated in ε when iμ lies in the continuum.
    pub fn resolve(&self, mu: f64, f: &Pair, energy_scale: f64) -> Result<LimitingResult> {
        if !self.in_continuum(mu) {
            let (x, stats) = self.solve(mu, 0.0, f)?;
            let v = x.to_stacked();
            return Ok(LimitingResult {
                value: v.clone(),
                direct: Some(v),
                eps: vec![],
                regularized_errors: vec![],
                defect: 0.0,
                iterations: stats.iterations,
            });
        }
        let eps = self.cfg.schedule.map(|e| e * energy_scale.abs());
        let direct = self.cfg.uses_exact(&self.op.grid);
        extrapolate(
            |e| self.solve(mu, e, f).map(|(x, s)| (x.to_stacked(), s.iterations)),
            eps,
            direct,
            &local_weight(&self.op.grid),
            self.cfg.defect_tol,
            "matrix",
        )
    }

    /// ||(L + iμ)X - P_c F|| / ||P_c F|| on |x| ≤ Lbox/2.
    ///
    /// Outgoing solutions do not fit the periodic box, so X is first tapered
    /// smoothly to zero outside |x| ≤ 0.8 Lbox and the residual is read
    /// where the taper equals one.
    pub fn residual(&self, mu: f64, x: &Pair, f: &Pair) -> f64 {
        let vol = self.op.vol();
        let grid = &self.op.grid;
        let l = grid.lbox();
        let r2 = grid.radius_squared();
        let taper: Vec<f64> = r2.iter().map(|&r| smooth_taper(r.sqrt(), 0.5 * l, 0.8 * l)).collect();
        let mut xt = x.clone();
        for i in 0..xt.len() {
            xt.u[i] *= taper[i];
            xt.v[i] *= taper[i];
        }
        let pcf = self.proj.apply_pc(f);
        let mut r = self.op.apply(&xt).add(&xt.scaled(C64::new(0.0, mu))).sub(&pcf);
        let mut g = pcf.clone();
        for i in 0..r.len() {
            if r2[i].sqrt() > 0.5 * l {
                r.u[i] = C64::new(0.0, 0.0);
                r.v[i] = C64::new(0.0, 0.0);
                g.u[i] = C64::new(0.0, 0.0);
                g.v[i] = C64::new(0.0, 0.0);
            }
        }
        r.norm(vol) / g.norm(vol).max(1e-300)
    }
}

/// Smooth step equal to 1 for r ≤ a and 0 for r ≥ b.
pub fn smooth_taper(r: f64, a: f64, b: f64) -> f64 {
    if r <= a {
        1.0
    } else if r >= b {
        0.0
    } else {
        let t = (r - a) / (b - a);
        let bump = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
        bump(1.0 - t) / (bump(1.0 - t) + bump(t))
    }
}

/// Free-operator comparison of the limiting-absorption pairing against quadrature.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PlemeljCheck {
    pub energy: f64,
    pub oracle: [f64; 2],
    pub direct: [f64; 2],
    pub extrapolated: [f64; 2],
    pub direct_error: f64,
    pub extrapolated_error: f64,
    pub defect: f64,
}

/// (1/2π) ∫ g(ξ)/(ξ² − k² − i0) dξ for even g, by subtraction at ξ = k.
fn plemelj_quadrature<G: Fn(f64) -> f64>(g: G, k: f64, cutoff: f64) -> C64 {
    let h = |x: f64| g(x) / (x + k);
    let hk = h(k);
    let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize| -> f64 {
        let n = n + n % 2;
        let dx = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for j in 1..n {
            let w = if j % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + j as f64 * dx);
        }
        s * dx / 3.0
    };
    let inner = |x: f64| {
        if (x - k).abs() < 1e-12 {
            let d = 1e-6;
            (h(k + d) - h(k - d)) / (2.0 * d)
        } else {
            (h(x) - hk) / (x - k)
        }
    };
    let near = simpson(&inner, 0.0, 2.0 * k, 20000);
    let far = simpson(&|x| h(x) / (x - k), 2.0 * k, cutoff.max(4.0 * k), 200000);
    let re = 2.0 * (near + far) / (2.0 * PI);
    let im = g(k) / (2.0 * k);
    C64::new(re, im)
}

/// Compares ⟨(−Δ − k² − i0)⁻¹ f, f⟩ for a Gaussian f of the given width
/// computed by the resolvent pipeline with the Plemelj–Sokhotski quadrature.
pub fn plemelj_check(grid: &Arc<Grid>, energy: f64, width: f64, cfg: &ResolventConfig) -> Result<PlemeljCheck> {
    if grid.dim() != 1 || energy <= 0.0 {
        return Err(Error::invalid("the Plemelj oracle is one-dimensional and needs a positive energy"));
    }
    let x = grid.axis();
    let f: Vec<C64> = x.iter().map(|x| C64::new((-x * x / (2.0 * width * width)).exp(), 0.0)).collect();
    let op = ScalarOperator::new(grid, vec![0.0; grid.len()], 0.0);
    let res = limiting_absorption_resolve(&op, energy, &f, energy, cfg)?;
    let vol = grid.cell_volume();
    let pair = |u: &[C64]| -> C64 { u.iter().zip(&f).map(|(a, b)| a * b.conj()).sum::<C64>() * vol };
    let k = energy.sqrt();
    let fhat2 = |xi: f64| 2.0 * PI * width * width * (-width * width * xi * xi).exp();
    let oracle = plemelj_quadrature(fhat2, k, k + 12.0 / width);
    let extrapolated = pair(&res.value);
    let direct = pair(res.best());
    Ok(PlemeljCheck {
        energy,
        oracle: [oracle.re, oracle.im],
        direct: [direct.re, direct.im],
        extrapolated: [extrapolated.re, extrapolated.im],
        direct_error: (direct - oracle).norm() / oracle.norm(),
        extrapolated_error: (extrapolated - oracle).norm() / oracle.norm(),
        defect: res.defect,
    })
}
