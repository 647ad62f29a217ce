//! Full NLS/GP time evolution and the modulation diagnostics measured on it.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{weighted_norm, Field, Grid, WeightedNormSpec};
use crate::ground_state::{pow_abs, GroundStateBranch};
use crate::krylov::solve_dense;
use crate::linear_spectrum::LinearSpectrum;
use crate::linearization::{build_linearization, neutral_modes, NeutralModeSet};
use crate::potential::Potential;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Peak damping rate of the sponge.
    pub sponge_strength: f64,
    /// Fraction of the half-box occupied by the sponge ramp.
    pub sponge_fraction: f64,
    /// Time steps between decompositions.
    pub cadence: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            dt: 0.025,
            t_end: 100.0,
            sponge_strength: 1.0,
            sponge_fraction: 0.15,
            cadence: 10,
            newton_tol: 1e-12,
            newton_max_iter: 30,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(Error::invalid("dt must be positive and t_end non-negative"));
        }
        if self.cadence == 0 {
            return Err(Error::invalid("decomposition cadence must be at least one step"));
        }
        let cells = self.sponge_fraction * grid.n() as f64 / 2.0;
        if self.sponge_strength > 0.0 && cells < 10.0 {
            return Err(Error::invalid(format!(
                "sponge spans {cells:.1} grid cells; at least 10 are required"
            )));
        }
        Ok(())
    }
}

/// Smooth quadratic ramp W(x) ≥ 0 on the outer `fraction` of each half-axis.
pub fn sponge_profile(grid: &Grid, strength: f64, fraction: f64) -> Vec<f64> {
    let l = grid.lbox();
    let start = (1.0 - fraction) * l;
    let mut w = vec![0.0; grid.len()];
    for (i, wi) in w.iter_mut().enumerate() {
        let p = grid.point(i);
        let mut s: f64 = 0.0;
        for c in p.iter().take(grid.dim()) {
            let t = ((c.abs() - start) / (fraction * l)).clamp(0.0, 1.0);
            s = s.max(t);
        }
        *wi = strength * s * s;
    }
    w
}

/// Strang split-step propagator for iψ_t = -Δψ + Vψ - |ψ|^{2σ}ψ - iWψ.
pub struct Propagator {
    grid: Arc<Grid>,
    v: Vec<f64>,
    sigma: f64,
    sponge: Vec<f64>,
    kinetic: Vec<C64>,
    half_decay: Vec<f64>,
    dt: f64,
    nonlinear: bool,
}

impl Propagator {
    pub fn new(pot: &Potential, sigma: f64, cfg: &EvolutionConfig) -> Result<Propagator> {
        cfg.validate(&pot.grid)?;
        let grid = pot.grid.clone();
        let sponge = if cfg.sponge_strength > 0.0 {
            sponge_profile(&grid, cfg.sponge_strength, cfg.sponge_fraction)
        } else {
            vec![0.0; grid.len()]
        };
        let kinetic = grid
            .k_squared()
            .iter()
            .map(|k2| C64::from_polar(1.0, -k2 * cfg.dt))
            .collect();
        let half_decay = sponge.iter().map(|w| (-0.5 * w * cfg.dt).exp()).collect();
        Ok(Propagator {
            grid,
            v: pot.values.clone(),
            sigma,
            sponge,
            kinetic,
            half_decay,
            dt: cfg.dt,
            nonlinear: sigma > 0.0,
        })
    }

    /// Propagator with the nonlinearity switched off.
    pub fn linear(pot: &Potential, cfg: &EvolutionConfig) -> Result<Propagator> {
        let mut p = Propagator::new(pot, 1.0, cfg)?;
        p.nonlinear = false;
        Ok(p)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sponge(&self) -> &[f64] {
        &self.sponge
    }

    fn half_potential(&self, psi: &mut [C64]) -> f64 {
        let h = 0.5 * self.dt;
        let mut lost = 0.0;
        for i in 0..psi.len() {
            let a2 = psi[i].norm_sqr();
            let nl = if self.nonlinear {
                pow_abs(a2.sqrt(), 2.0 * self.sigma)
            } else {
                0.0
            };
            let d = self.half_decay[i];
            lost += a2 * (1.0 - d * d);
            psi[i] *= C64::from_polar(d, -h * (self.v[i] - nl));
        }
        lost * self.grid.cell_volume()
    }

    /// One step; returns the mass removed by the sponge.
    pub fn step(&self, psi: &mut [C64]) -> f64 {
        let mut lost = self.half_potential(psi);
        self.grid.forward(psi);
        for (p, k) in psi.iter_mut().zip(&self.kinetic) {
            *p *= k;
        }
        self.grid.inverse(psi);
        lost += self.half_potential(psi);
        lost
    }

    pub fn mass(&self, psi: &[C64]) -> f64 {
        psi.iter().map(|x| x.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    /// H = ∫ |∇ψ|² + V|ψ|² - |ψ|^{2σ+2}/(σ+1).
    pub fn energy(&self, psi: &[C64]) -> f64 {
        let mut lap = psi.to_vec();
        self.grid.apply_real_symbol(&mut lap, |k2| k2);
        let vol = self.grid.cell_volume();
        let mut e = 0.0;
        for i in 0..psi.len() {
            let a = psi[i].norm();
            e += (psi[i].conj() * lap[i]).re + self.v[i] * a * a;
            if self.nonlinear {
                e -= pow_abs(a, 2.0 * self.sigma + 2.0) / (self.sigma + 1.0);
            }
        }
        e * vol
    }

    /// Streams `steps` steps, calling `observe(step, ψ, absorbed)` after each.
    pub fn propagate<F: FnMut(usize, &[C64], f64) -> Result<()>>(
        &self,
        psi: &mut [C64],
        steps: usize,
        mut observe: F,
    ) -> Result<f64> {
        let mut absorbed = 0.0;
        for s in 1..=steps {
            absorbed += self.step(psi);
            if psi.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
                return Err(Error::NonConvergence {
                    what: format!("split-step evolution became unstable; try dt < {}", 0.5 * self.dt),
                    iterations: s,
                    residual: f64::NAN,
                });
            }
            observe(s, psi, absorbed)?;
        }
        Ok(absorbed)
    }
}

/// Neutral modes tabulated at the branch points and interpolated linearly in λ.
#[derive(Debug, Clone)]
pub struct ModeTable {
    pub lambdas: Vec<f64>,
    pub modes: Vec<NeutralModeSet>,
}

impl ModeTable {
    /// Computes the modes at every branch point, with signs aligned along the branch.
    pub fn build(pot: &Potential, spec: &LinearSpectrum, branch: &GroundStateBranch) -> Result<ModeTable> {
        let vol = pot.grid.cell_volume();
        let mut lambdas = Vec::new();
        let mut modes: Vec<NeutralModeSet> = Vec::new();
        for p in &branch.points {
            let op = build_linearization(pot, p)?;
            let mut m = neutral_modes(&op, spec)?;
            if let Some(prev) = modes.last() {
                for k in 0..m.count() {
                    let c: f64 = m.xi[k].iter().zip(&prev.xi[k]).map(|(a, b)| a * b).sum::<f64>() * vol;
                    if c < 0.0 {
                        m.xi[k].iter_mut().for_each(|x| *x = -*x);
                        m.eta[k].iter_mut().for_each(|x| *x = -*x);
                    }
                }
            }
            lambdas.push(p.lambda());
            modes.push(m);
        }
        Ok(ModeTable { lambdas, modes })
    }

    pub fn from_single(lambda: f64, modes: NeutralModeSet) -> ModeTable {
        ModeTable {
            lambdas: vec![lambda],
            modes: vec![modes],
        }
    }

    pub fn count(&self) -> usize {
        self.modes[0].count()
    }

    pub fn at(&self, lambda: f64) -> NeutralModeSet {
        if self.lambdas.len() == 1 {
            return self.modes[0].clone();
        }
        let mut i = 0;
        while i + 2 < self.lambdas.len() && self.lambdas[i + 1] < lambda {
            i += 1;
        }
        let (a, b) = (self.lambdas[i], self.lambdas[i + 1]);
        let t = (lambda - a) / (b - a);
        let (p, q) = (&self.modes[i], &self.modes[i + 1]);
        let mix = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| (1.0 - t) * u + t * v).collect() };
        NeutralModeSet {
            energies: p.energies.iter().zip(&q.energies).map(|(u, v)| (1.0 - t) * u + t * v).collect(),
            xi: p.xi.iter().zip(&q.xi).map(|(x, y)| mix(x, y)).collect(),
            eta: p.eta.iter().zip(&q.eta).map(|(x, y)| mix(x, y)).collect(),
            residuals: p.residuals.clone(),
        }
    }
}

/// Values of the normal-form polynomials at one (λ, z).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionValues {
    pub a1: f64,
    pub a2: f64,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// Source of the normal-form corrections used by the decomposition.
pub trait Corrections {
    fn values(&self, z: &[C64]) -> CorrectionValues;

    /// Σ_{m+n=2,3} R_{m,n}(z) as a complex field, when available.
    fn driven(&self, _z: &[C64]) -> Option<Vec<C64>> {
        None
    }
}

/// Decomposition without normal-form corrections.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoCorrections;

impl Corrections for NoCorrections {
    fn values(&self, z: &[C64]) -> CorrectionValues {
        CorrectionValues {
            a1: 0.0,
            a2: 0.0,
            p: vec![0.0; z.len()],
            q: vec![0.0; z.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModulationState {
    pub lambda: f64,
    /// Total phase ∫λ + γ.
    pub theta: f64,
    pub gamma: f64,
    pub z: Vec<C64>,
    pub r: Vec<C64>,
    pub corrections: CorrectionValues,
    /// The 2N+2 symplectic orthogonality residuals.
    pub orthogonality: Vec<f64>,
    pub newton_iterations: usize,
}

impl ModulationState {
    pub fn max_orthogonality(&self) -> f64 {
        self.orthogonality.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn z_norm_sq(&self) -> f64 {
        self.z.iter().map(|x| x.norm_sqr()).sum()
    }
}

/// Everything needed to decompose ψ near the branch.
pub struct Decomposer<'a> {
    pub branch: &'a GroundStateBranch,
    pub table: &'a ModeTable,
    pub corrections: &'a dyn Corrections,
    pub tol: f64,
    pub max_iter: usize,
}

struct Frame {
    phi: Vec<f64>,
    dphi: Vec<f64>,
    modes: NeutralModeSet,
}

impl<'a> Decomposer<'a> {
    pub fn new(branch: &'a GroundStateBranch, table: &'a ModeTable, corrections: &'a dyn Corrections) -> Self {
        Decomposer {
            branch,
            table,
            corrections,
            tol: 1e-12,
            max_iter: 30,
        }
    }

    fn frame(&self, lambda: f64) -> Result<Frame> {
        let (phi, dphi) = self.branch.interpolate(lambda)?;
        Ok(Frame {
            phi,
            dphi,
            modes: self.table.at(lambda),
        })
    }

    /// φ^λ + a₁∂λφ + i a₂ φ + (α+p)·ξ + i(β+q)·η.
    fn ansatz(&self, f: &Frame, z: &[C64], c: &CorrectionValues) -> Vec<C64> {
        let n = f.phi.len();
        let mut out: Vec<C64> = (0..n)
            .map(|i| C64::new(f.phi[i] + c.a1 * f.dphi[i], c.a2 * f.phi[i]))
            .collect();
        for (k, zk) in z.iter().enumerate() {
            let a = zk.re + c.p[k];
            let b = zk.im + c.q[k];
            for i in 0..n {
                out[i] += C64::new(a * f.modes.xi[k][i], b * f.modes.eta[k][i]);
            }
        }
        out
    }

    /// R and the orthogonality residuals at the parameter vector x = (λ, θ, α, β).
    fn residual(&self, psi: &[C64], x: &[f64]) -> Result<(Vec<C64>, Vec<f64>, CorrectionValues)> {
        let nm = self.table.count();
        let lambda = x[0];
        let rot = C64::from_polar(1.0, -x[1]);
        let z: Vec<C64> = (0..nm).map(|k| C64::new(x[2 + k], x[2 + nm + k])).collect();
        let f = self.frame(lambda)?;
        let c = self.corrections.values(&z);
        let s = self.ansatz(&f, &z, &c);
        let r: Vec<C64> = psi.iter().zip(&s).map(|(p, a)| rot * p - a).collect();
        let vol = self.branch.grid.cell_volume();
        let ip = |g: &[f64]| -> C64 { r.iter().zip(g).map(|(a, b)| a * b).sum::<C64>() * vol };
        let mut res = vec![ip(&f.phi).re, ip(&f.dphi).im];
        for k in 0..nm {
            res.push(ip(&f.modes.eta[k]).re);
        }
        for k in 0..nm {
            res.push(ip(&f.modes.xi[k]).im);
        }
        Ok((r, res, c))
    }

    /// Newton on the 2N+2 symplectic orthogonality conditions.
    pub fn decompose(&self, psi: &[C64], guess: &ModulationState) -> Result<ModulationState> {
        let nm = self.table.count();
        let dim = 2 * nm + 2;
        let mut x = vec![guess.lambda, guess.theta];
        x.extend(guess.z.iter().map(|c| c.re));
        x.extend(guess.z.iter().map(|c| c.im));
        let (mut r, mut res, mut corr) = self.residual(psi, &x)?;
        let mut it = 0;
        loop {
            let worst = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if worst <= self.tol {
                break;
            }
            if it >= self.max_iter {
                if worst <= 1e3 * self.tol {
                    break;
                }
                return Err(Error::no_convergence("decomposition lost", it, worst));
            }
            let mut jac = vec![vec![0.0; dim]; dim];
            for j in 0..dim {
                let h = 1e-7 * x[j].abs().max(1.0);
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let (_, rp, _) = self.residual(psi, &xp)?;
                let (_, rm, _) = self.residual(psi, &xm)?;
                for i in 0..dim {
                    jac[i][j] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            let a: Vec<Vec<C64>> = jac.iter().map(|row| row.iter().map(|v| C64::new(*v, 0.0)).collect()).collect();
            let rhs: Vec<C64> = res.iter().map(|v| C64::new(-v, 0.0)).collect();
            let dx: Vec<f64> = solve_dense(a, rhs)
                .map_err(|_| Error::no_convergence("decomposition lost (singular Jacobian)", it, worst))?
                .iter()
                .map(|c| c.re)
                .collect();
            let mut step = 1.0;
            loop {
                let xn: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + step * d).collect();
                match self.residual(psi, &xn) {
                    Ok((rn, resn, cn)) => {
                        let wn = resn.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                        if wn < worst || step < 1e-3 {
                            x = xn;
                            r = rn;
                            res = resn;
                            corr = cn;
                            break;
                        }
                    }
                    Err(e) if step < 1e-3 => return Err(e),
                    Err(_) => {}
                }
                step *= 0.5;
            }
            it += 1;
        }
        let z = (0..nm).map(|k| C64::new(x[2 + k], x[2 + nm + k])).collect();
        Ok(ModulationState {
            lambda: x[0],
            theta: x[1],
            gamma: guess.gamma + (x[1] - guess.theta),
            z,
            r,
            corrections: corr,
            orthogonality: res,
            newton_iterations: it,
        })
    }
}

/// ψ₀ = e^{iγ₀}[φ^{λ₀} + α₀·ξ + iβ₀·η + R₀]; the second value flags data outside the small-amplitude regime.
pub fn synthesize_initial_data(
    branch: &GroundStateBranch,
    modes: &NeutralModeSet,
    lambda0: f64,
    gamma0: f64,
    alpha0: &[f64],
    beta0: &[f64],
    r0: Option<&[C64]>,
    smallness: f64,
) -> Result<(Field, Option<String>)> {
    if alpha0.len() != modes.count() || beta0.len() != modes.count() {
        return Err(Error::invalid("α₀, β₀ must have one entry per neutral mode"));
    }
    let (phi, _) = branch.interpolate(lambda0)?;
    let n = phi.len();
    let rot = C64::from_polar(1.0, gamma0);
    let mut data: Vec<C64> = phi.iter().map(|p| C64::new(*p, 0.0)).collect();
    for k in 0..modes.count() {
        for i in 0..n {
            data[i] += C64::new(alpha0[k] * modes.xi[k][i], beta0[k] * modes.eta[k][i]);
        }
    }
    if let Some(r) = r0 {
        for i in 0..n {
            data[i] += r[i];
        }
    }
    data.iter_mut().for_each(|x| *x *= rot);
    let amp: f64 = alpha0.iter().chain(beta0).map(|x| x.abs()).sum();
    let norm = (phi.iter().map(|p| p * p).sum::<f64>() * branch.grid.cell_volume()).sqrt();
    let warning = (amp > smallness * norm).then(|| {
        format!("outside theorem regime: |α₀|+|β₀| = {amp:.3e} exceeds {smallness}·||φ|| = {:.3e}", smallness * norm)
    });
    Ok((Field::from_vec(&branch.grid, data)?, warning))
}

/// One recorded decomposition.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub z: Vec<[f64; 2]>,
    pub z_norm_sq: f64,
    pub soliton_mass: f64,
    pub mass: f64,
    pub absorbed: f64,
    pub budget_error: f64,
    pub r_l2: f64,
    pub r_weighted_h2: f64,
    pub r_sup: f64,
    pub r_weighted_l2: f64,
    pub r_tilde_weighted_l2: Option<f64>,
    pub orthogonality: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunDiagnostics {
    pub lambda0: f64,
    pub z0: Vec<[f64; 2]>,
    pub initial_mass: f64,
    pub samples: Vec<Sample>,
    pub lambda_inf: f64,
    pub max_budget_error: f64,
    pub max_r_h2: f64,
}

impl RunDiagnostics {
    pub fn z0_norm_sq(&self) -> f64 {
        self.z0.iter().map(|c| c[0] * c[0] + c[1] * c[1]).sum()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let nm = self.z0.len();
        let mut head = vec!["t".to_string(), "lambda".into(), "gamma".into()];
        for k in 0..nm {
            head.push(format!("re_z{k}"));
            head.push(format!("im_z{k}"));
        }
        head.extend(
            [
                "z_norm_sq",
                "soliton_mass",
                "mass",
                "absorbed",
                "budget_error",
                "r_l2",
                "r_weighted_h2",
                "r_sup",
                "r_weighted_l2",
                "r_tilde_weighted_l2",
                "orthogonality",
            ]
            .map(String::from),
        );
        wr.write_record(&head)?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string(), s.lambda.to_string(), s.gamma.to_string()];
            for c in &s.z {
                row.push(c[0].to_string());
                row.push(c[1].to_string());
            }
            row.extend([
                s.z_norm_sq.to_string(),
                s.soliton_mass.to_string(),
                s.mass.to_string(),
                s.absorbed.to_string(),
                s.budget_error.to_string(),
                s.r_l2.to_string(),
                s.r_weighted_h2.to_string(),
                s.r_sup.to_string(),
                s.r_weighted_l2.to_string(),
                s.r_tilde_weighted_l2.map(|v| v.to_string()).unwrap_or_default(),
                s.orthogonality.to_string(),
            ]);
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Initial guess for the decomposition of freshly synthesized data.
pub fn initial_guess(lambda0: f64, gamma0: f64, z0: &[C64], n: usize) -> ModulationState {
    ModulationState {
        lambda: lambda0,
        theta: gamma0,
        gamma: gamma0,
        z: z0.to_vec(),
        r: vec![C64::new(0.0, 0.0); n],
        corrections: CorrectionValues::default(),
        orthogonality: vec![],
        newton_iterations: 0,
    }
}

fn weighted(grid: &Arc<Grid>, r: &[C64], s: u32) -> Result<f64> {
    let f = Field::from_vec(grid, r.to_vec())?;
    Ok(weighted_norm(&f, WeightedNormSpec { s, nu: -4 }))
}

/// Propagates ψ₀, decomposing on the configured cadence.
pub fn track_run(
    psi0: &Field,
    cfg: &EvolutionConfig,
    prop: &Propagator,
    dec: &Decomposer,
    guess: ModulationState,
    lambda0: f64,
    z0: &[C64],
) -> Result<RunDiagnostics> {
    let grid = psi0.grid().clone();
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut psi = psi0.data().to_vec();
    let m0 = prop.mass(&psi);
    let mut state = dec.decompose(&psi, &guess)?;
    let mut samples = Vec::new();
    let mut lambda_integral = 0.0;
    let mut last_t = 0.0;
    let mut last_lambda = state.lambda;
    let record = |t: f64, psi: &[C64], absorbed: f64, st: &ModulationState| -> Result<Sample> {
        let mass = prop.mass(psi);
        let r_tilde = match dec.corrections.driven(&st.z) {
            Some(d) => {
                let rt: Vec<C64> = st.r.iter().zip(&d).map(|(a, b)| a - b).collect();
                Some(weighted(&grid, &rt, 0)?)
            }
            None => None,
        };
        Ok(Sample {
            t,
            lambda: st.lambda,
            gamma: st.gamma,
            z: st.z.iter().map(|c| [c.re, c.im]).collect(),
            z_norm_sq: st.z_norm_sq(),
            soliton_mass: dec.branch.mass_at(st.lambda)?,
            mass,
            absorbed,
            budget_error: (mass + absorbed - m0).abs() / m0,
            r_l2: (st.r.iter().map(|x| x.norm_sqr()).sum::<f64>() * grid.cell_volume()).sqrt(),
            r_weighted_h2: weighted(&grid, &st.r, 2)?,
            r_sup: st.r.iter().fold(0.0, |m, x| m.max(x.norm())),
            r_weighted_l2: weighted(&grid, &st.r, 0)?,
            r_tilde_weighted_l2: r_tilde,
            orthogonality: st.max_orthogonality(),
        })
    };
    samples.push(record(0.0, &psi, 0.0, &state)?);
    let dt = prop.dt();
    prop.propagate(&mut psi, steps, |s, p, absorbed| {
        if s % cfg.cadence != 0 && s != steps {
            return Ok(());
        }
        let t = s as f64 * dt;
        let mut g = state.clone();
        g.theta += state.lambda * (t - last_t);
        g.gamma = state.gamma;
        let mut next = dec.decompose(p, &g)?;
        lambda_integral += 0.5 * (last_lambda + next.lambda) * (t - last_t);
        next.gamma = next.theta - lambda_integral;
        last_t = t;
        last_lambda = next.lambda;
        samples.push(record(t, p, absorbed, &next)?);
        state = next;
        Ok(())
    })?;
    let tail_start = 0.9 * cfg.t_end;
    let tail: Vec<f64> = samples.iter().filter(|s| s.t >= tail_start).map(|s| s.lambda).collect();
    let lambda_inf = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    Ok(RunDiagnostics {
        lambda0,
        z0: z0.iter().map(|c| [c.re, c.im]).collect(),
        initial_mass: m0,
        max_budget_error: samples.iter().map(|s| s.budget_error).fold(0.0, f64::max),
        max_r_h2: samples.iter().map(|s| s.r_weighted_h2).fold(0.0, f64::max),
        samples,
        lambda_inf,
    })
}

/// Least-squares slope and intercept of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DecayFit {
    /// Slope of log|z| against log t.
    pub exponent_raw: f64,
    /// Slope of log|z| against log(t + t*), t* = 1/(2γ̂|z₀|²).
    pub exponent: f64,
    /// Fitted 2γ̂ from |z|⁻² = |z₀|⁻² + 2γ̂ t.
    pub quartic_rate: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Fits the resonant decay law on the window 0.1 ≤ |z|/|z₀| ≤ 0.8.
pub fn fit_decay(diag: &RunDiagnostics) -> Result<DecayFit> {
    let z0 = diag.z0_norm_sq().sqrt();
    if z0 == 0.0 {
        return Err(Error::invalid("no neutral-mode excitation to fit"));
    }
    let pts: Vec<&Sample> = diag
        .samples
        .iter()
        .filter(|s| {
            let r = s.z_norm_sq.sqrt() / z0;
            s.t > 0.0 && (0.1..=0.8).contains(&r)
        })
        .collect();
    if pts.len() < 8 {
        return Err(Error::no_convergence("run too short for the decay fit", pts.len(), f64::NAN));
    }
    let t: Vec<f64> = pts.iter().map(|s| s.t).collect();
    let inv: Vec<f64> = pts.iter().map(|s| 1.0 / s.z_norm_sq).collect();
    let (rate, icpt) = linear_fit(&t, &inv);
    let logz: Vec<f64> = pts.iter().map(|s| 0.5 * s.z_norm_sq.ln()).collect();
    let logt: Vec<f64> = t.iter().map(|x| x.ln()).collect();
    let (raw, _) = linear_fit(&logt, &logz);
    let tstar = icpt / rate;
    let logts: Vec<f64> = t.iter().map(|x| (x + tstar).ln()).collect();
    let (exponent, _) = linear_fit(&logts, &logz);
    Ok(DecayFit {
        exponent_raw: raw,
        exponent,
        quartic_rate: rate,
        window: (t[0], *t.last().unwrap()),
        points: pts.len(),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct SourceIntegrals {
    pub int_s_lambda: f64,
    pub int_s_z: f64,
    pub ratio_lambda: f64,
    pub ratio_z: f64,
}

/// S_λ = dN(λ)/dt - z*Γ₀z and S_z = d|z|²/dt + 2z*Γ₀z by central differences.
pub fn residual_sources<F: Fn(&[C64]) -> f64>(diag: &RunDiagnostics, gamma0_form: F) -> (Vec<(f64, f64, f64)>, SourceIntegrals) {
    let s = &diag.samples;
    let mut series = Vec::new();
    for i in 1..s.len().saturating_sub(1) {
        let dt = s[i + 1].t - s[i - 1].t;
        let dn = (s[i + 1].soliton_mass - s[i - 1].soliton_mass) / dt;
        let dz = (s[i + 1].z_norm_sq - s[i - 1].z_norm_sq) / dt;
        let z: Vec<C64> = s[i].z.iter().map(|c| C64::new(c[0], c[1])).collect();
        let g = gamma0_form(&z);
        series.push((s[i].t, dn - g, dz + 2.0 * g));
    }
    let mut il = 0.0;
    let mut iz = 0.0;
    for w in series.windows(2) {
        let h = w[1].0 - w[0].0;
        il += 0.5 * h * (w[0].1 + w[1].1);
        iz += 0.5 * h * (w[0].2 + w[1].2);
    }
    let z2 = diag.z0_norm_sq();
    (
        series,
        SourceIntegrals {
            int_s_lambda: il,
            int_s_z: iz,
            ratio_lambda: il.abs() / z2,
            ratio_z: iz.abs() / z2,
        },
    )
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Equipartition {
    pub ratio: f64,
    pub radiated_ratio: f64,
    pub final_fraction: f64,
}

/// (N(λ_∞) - N(λ₀)) / (½|z₀|²) and the absorbed-mass counterpart.
///
/// λ₀ and z₀ are the modulation parameters of the initial datum, read off the
/// first recorded decomposition; with normal-form corrections these differ
/// from the synthesis parameters at order |z₀|².
pub fn measure_equipartition(diag: &RunDiagnostics, branch: &GroundStateBranch) -> Result<Equipartition> {
    let first = diag.samples.first().ok_or_else(|| Error::invalid("empty run"))?;
    let z2 = first.z_norm_sq;
    if z2 == 0.0 {
        return Err(Error::invalid("ratio undefined for z₀ = 0"));
    }
    let last = diag.samples.last().ok_or_else(|| Error::invalid("empty run"))?;
    let frac = last.z_norm_sq / z2;
    if frac > 0.05 {
        return Err(Error::no_convergence(
            format!("run too short: |z(t_end)|²/|z₀|² = {frac:.3}"),
            diag.samples.len(),
            frac,
        ));
    }
    let gain = branch.mass_at(diag.lambda_inf)? - branch.mass_at(first.lambda)?;
    Ok(Equipartition {
        ratio: gain / (0.5 * z2),
        radiated_ratio: last.absorbed / (0.5 * z2),
        final_fraction: frac,
    })
}
