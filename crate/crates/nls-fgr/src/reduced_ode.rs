//! Reduced modulation system ż = −iE(λ)z − Γz + Λz, Ṅ(λ) = rate(z).
//!
//! The soliton is advanced through its mass N = ‖φ^λ‖², and λ is recovered
//! from the inverse of the tabulated mass curve.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fgr::{random_z, FgrData, QuadraticTensor};
use crate::ground_state::{hermite, GroundStateBranch, MassRow};
use crate::normal_form::ScalarPoly;

/// Quartic form driving the soliton mass.
#[derive(Debug, Clone, PartialEq)]
pub enum MassRate {
    /// z*Γ₀z from the FGR data.
    Gamma0,
    /// z*Γz, the rate for which 2N + |z|² is exactly conserved with the true Γ.
    Gamma,
    /// 2Π₂,₂(z), the full quartic coefficient of the mass equation.
    Pi22(ScalarPoly),
}

#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub sigma: f64,
    pub mass_curve: Vec<MassRow>,
    /// FGR data sorted by λ; the first entry is used when frozen.
    pub fgr: Vec<FgrData>,
    /// Interpolate Γ, Λ, Γ₀ and E linearly in λ between the `fgr` entries.
    pub interpolate: bool,
    pub mass_rate: MassRate,
    /// Replace Γ by Γ₀ in the ż equation.
    pub use_gamma0_in_z: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedState {
    pub t: f64,
    pub lambda: f64,
    pub z: Vec<C64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub lambda: f64,
    pub mass: f64,
    pub z: Vec<[f64; 2]>,
    pub z_norm_sq: f64,
    /// 2N + |z|² minus its initial value.
    pub drift: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
}

struct Coefficients {
    energies: Vec<f64>,
    gamma: QuadraticTensor,
    lambda_form: QuadraticTensor,
    gamma0: QuadraticTensor,
}

impl ReducedModel {
    pub fn new(branch: &GroundStateBranch, fgr: Vec<FgrData>, mass_rate: MassRate) -> Result<ReducedModel> {
        if fgr.is_empty() {
            return Err(Error::invalid("reduced model needs FGR data"));
        }
        let mut fgr = fgr;
        fgr.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        let model = ReducedModel {
            sigma: branch.sigma,
            mass_curve: branch.mass_curve()?,
            fgr,
            interpolate: false,
            mass_rate,
            use_gamma0_in_z: false,
        };
        model.validate()?;
        Ok(model)
    }

    /// Γ must be positive semidefinite at every tabulated point.
    pub fn validate(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for f in &self.fgr {
            let n = f.energies.len();
            for _ in 0..32 {
                let z = random_z(&mut rng, n);
                let z2: f64 = z.iter().map(|x| x.norm_sqr()).sum();
                if f.gamma_form(&z) < -1e-12 * z2 * z2 * f.gamma.max_abs() {
                    return Err(Error::Assumption(format!(
                        "Γ-form is not positive semidefinite at λ = {}",
                        f.lambda
                    )));
                }
            }
        }
        for w in self.mass_curve.windows(2) {
            if w[1].mass <= w[0].mass {
                return Err(Error::invalid("mass curve is not strictly monotone"));
            }
        }
        Ok(())
    }

    pub fn modes(&self) -> usize {
        self.fgr[0].energies.len()
    }

    pub fn lambda_range(&self) -> (f64, f64) {
        (self.mass_curve[0].lambda, self.mass_curve.last().unwrap().lambda)
    }

    fn segment(&self, lambda: f64) -> Result<usize> {
        let (a, b) = self.lambda_range();
        if !(a - 1e-12..=b + 1e-12).contains(&lambda) {
            return Err(Error::invalid(format!("λ = {lambda} left the branch range [{a}, {b}]")));
        }
        let mut i = 0;
        while i + 2 < self.mass_curve.len() && self.mass_curve[i + 1].lambda < lambda {
            i += 1;
        }
        Ok(i)
    }

    pub fn mass(&self, lambda: f64) -> Result<f64> {
        let i = self.segment(lambda)?;
        let (p, q) = (&self.mass_curve[i], &self.mass_curve[i + 1]);
        Ok(hermite(p.lambda, q.lambda, p.mass, q.mass, p.dmass, q.dmass, lambda).0)
    }

    pub fn lambda_of_mass(&self, mass: f64) -> Result<f64> {
        let first = &self.mass_curve[0];
        let last = self.mass_curve.last().unwrap();
        if mass < first.mass - 1e-14 || mass > last.mass + 1e-14 {
            return Err(Error::invalid(format!(
                "mass {mass} left the branch range [{}, {}]",
                first.mass, last.mass
            )));
        }
        let mut i = 0;
        while i + 2 < self.mass_curve.len() && self.mass_curve[i + 1].mass < mass {
            i += 1;
        }
        let (p, q) = (&self.mass_curve[i], &self.mass_curve[i + 1]);
        let (mut lo, mut hi) = (p.lambda, q.lambda);
        let mut x = lo + (hi - lo) * (mass - p.mass) / (q.mass - p.mass);
        for _ in 0..100 {
            let (f, df) = hermite(p.lambda, q.lambda, p.mass, q.mass, p.dmass, q.dmass, x);
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
        }
        Ok(x)
    }

    fn coefficients(&self, lambda: f64) -> Coefficients {
        let f0 = &self.fgr[0];
        if !self.interpolate || self.fgr.len() == 1 {
            return Coefficients {
                energies: f0.energies.clone(),
                gamma: f0.gamma.clone(),
                lambda_form: f0.lambda_form.clone(),
                gamma0: f0.gamma0.clone(),
            };
        }
        let mut i = 0;
        while i + 2 < self.fgr.len() && self.fgr[i + 1].lambda < lambda {
            i += 1;
        }
        let (a, b) = (&self.fgr[i], &self.fgr[i + 1]);
        let t = ((lambda - a.lambda) / (b.lambda - a.lambda)).clamp(0.0, 1.0);
        Coefficients {
            energies: a.energies.iter().zip(&b.energies).map(|(x, y)| (1.0 - t) * x + t * y).collect(),
            gamma: a.gamma.combine(1.0 - t, &b.gamma, t),
            lambda_form: a.lambda_form.combine(1.0 - t, &b.lambda_form, t),
            gamma0: a.gamma0.combine(1.0 - t, &b.gamma0, t),
        }
    }

    /// Largest frequency over the tabulated points.
    pub fn max_energy(&self) -> f64 {
        self.fgr
            .iter()
            .flat_map(|f| f.energies.iter().cloned())
            .fold(0.0, f64::max)
    }

    fn rate(&self, c: &Coefficients, z: &[C64]) -> f64 {
        match &self.mass_rate {
            MassRate::Gamma0 => c.gamma0.form(z).re,
            MassRate::Gamma => c.gamma.form(z).re,
            MassRate::Pi22(p) => 2.0 * p.eval(z).re,
        }
    }

    /// Time derivative of (N, z).
    fn rhs(&self, mass: f64, z: &[C64]) -> Result<(f64, Vec<C64>)> {
        let lambda = self.lambda_of_mass(mass)?;
        let c = self.coefficients(lambda);
        let damp = if self.use_gamma0_in_z { &c.gamma0 } else { &c.gamma };
        let gz = damp.apply(z);
        let lz = c.lambda_form.apply(z);
        let dz = (0..z.len())
            .map(|k| C64::new(0.0, -c.energies[k]) * z[k] - gz[k] + lz[k])
            .collect();
        Ok((self.rate(&c, z), dz))
    }
}

fn axpy(z: &[C64], h: f64, k: &[C64]) -> Vec<C64> {
    z.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Classical RK4 on (N, z); one point is recorded every `record_every` steps.
pub fn integrate_reduced(
    model: &ReducedModel,
    state0: &ReducedState,
    t_end: f64,
    dt: f64,
    record_every: usize,
) -> Result<Trajectory> {
    if dt <= 0.0 || t_end < state0.t {
        return Err(Error::invalid("need dt > 0 and t_end ≥ t₀"));
    }
    if dt * model.max_energy() > 0.1 {
        return Err(Error::invalid(format!(
            "dt = {dt} does not resolve the phase: dt·E = {:.3} > 0.1",
            dt * model.max_energy()
        )));
    }
    if state0.z.len() != model.modes() {
        return Err(Error::invalid("z₀ length differs from the number of neutral modes"));
    }
    let every = record_every.max(1);
    let mut mass = model.mass(state0.lambda)?;
    let mut z = state0.z.clone();
    let inv0 = 2.0 * mass + z.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let steps = ((t_end - state0.t) / dt).round() as usize;
    let record = |t: f64, mass: f64, z: &[C64]| -> Result<TrajectoryPoint> {
        let z2: f64 = z.iter().map(|x| x.norm_sqr()).sum();
        Ok(TrajectoryPoint {
            t,
            lambda: model.lambda_of_mass(mass)?,
            mass,
            z: z.iter().map(|c| [c.re, c.im]).collect(),
            z_norm_sq: z2,
            drift: 2.0 * mass + z2 - inv0,
        })
    };
    let mut points = vec![record(state0.t, mass, &z)?];
    for s in 1..=steps {
        let (k1m, k1z) = model.rhs(mass, &z)?;
        let (k2m, k2z) = model.rhs(mass + 0.5 * dt * k1m, &axpy(&z, 0.5 * dt, &k1z))?;
        let (k3m, k3z) = model.rhs(mass + 0.5 * dt * k2m, &axpy(&z, 0.5 * dt, &k2z))?;
        let (k4m, k4z) = model.rhs(mass + dt * k3m, &axpy(&z, dt, &k3z))?;
        mass += dt / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
        for k in 0..z.len() {
            z[k] += dt / 6.0 * (k1z[k] + 2.0 * k2z[k] + 2.0 * k3z[k] + k4z[k]);
        }
        if !mass.is_finite() || z.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(Error::no_convergence("reduced integration", s, f64::NAN));
        }
        if s % every == 0 || s == steps {
            points.push(record(state0.t + s as f64 * dt, mass, &z)?);
        }
    }
    Ok(Trajectory { points })
}

impl Trajectory {
    pub fn final_point(&self) -> &TrajectoryPoint {
        self.points.last().expect("trajectory always holds the initial point")
    }

    /// Linear interpolation of λ(t).
    pub fn lambda_at(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].t {
            return p[0].lambda;
        }
        let i = p.partition_point(|x| x.t < t);
        if i >= p.len() {
            return p.last().unwrap().lambda;
        }
        let (a, b) = (&p[i - 1], &p[i]);
        a.lambda + (b.lambda - a.lambda) * (t - a.t) / (b.t - a.t)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.points.first().map(|p| p.z.len()).unwrap_or(0);
        let mut header = vec!["t".to_string(), "lambda".to_string(), "mass".to_string()];
        for k in 0..n {
            header.push(format!("re_z{}", k + 1));
            header.push(format!("im_z{}", k + 1));
        }
        header.push("z_norm_sq".to_string());
        header.push("invariant_drift".to_string());
        wr.write_record(&header)?;
        for p in &self.points {
            let mut row = vec![p.t.to_string(), p.lambda.to_string(), p.mass.to_string()];
            for c in &p.z {
                row.push(c[0].to_string());
                row.push(c[1].to_string());
            }
            row.push(p.z_norm_sq.to_string());
            row.push(p.drift.to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// 2N(λ(t)) + |z(t)|² − (2N(λ₀) + |z₀|²) along a trajectory.
pub fn equipartition_invariant(traj: &Trajectory) -> Vec<f64> {
    traj.points.iter().map(|p| p.drift).collect()
}

/// |z(t)|² = (|z₀|⁻² + 2γ̂t)⁻¹ for ż = −iEz − γ̂|z|²z.
pub fn scalar_closed_form(z0_sq: f64, gamma_hat: f64, t: f64) -> f64 {
    1.0 / (1.0 / z0_sq + 2.0 * gamma_hat * t)
}

/// Constants of C₊δ^{2(2σ−1)}|z|⁴ ≤ 2z*Γz ≤ C₋δ^{2(2σ−1)}|z|⁴.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Envelopes {
    pub c_plus: f64,
    pub c_minus: f64,
    pub delta: f64,
    pub sigma: f64,
    pub z0: f64,
}

/// Fits C± as the extremes of 2z*Γz/(δ^{2(2σ−1)}|z|⁴) over random directions.
pub fn envelopes(fgr: &FgrData, z0: f64, samples: usize, seed: u64) -> Result<Envelopes> {
    let n = fgr.energies.len();
    let scale = fgr.delta.powf(2.0 * (2.0 * fgr.sigma - 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    let mut dirs: Vec<Vec<C64>> = (0..n)
        .map(|k| {
            let mut z = vec![C64::new(0.0, 0.0); n];
            z[k] = C64::new(1.0, 0.0);
            z
        })
        .collect();
    dirs.extend((0..samples).map(|_| random_z(&mut rng, n)));
    for z in dirs {
        let z2: f64 = z.iter().map(|x| x.norm_sqr()).sum();
        let v = 2.0 * fgr.gamma_form(&z) / (scale * z2 * z2);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 {
        return Err(Error::Assumption(format!(
            "fitted envelope constant C₊ = {lo:.3e} is not positive"
        )));
    }
    Ok(Envelopes {
        c_plus: lo,
        c_minus: hi,
        delta: fgr.delta,
        sigma: fgr.sigma,
        z0,
    })
}

impl Envelopes {
    fn at(&self, c: f64, t: f64) -> f64 {
        let s = self.delta.powf(2.0 * (2.0 * self.sigma - 1.0));
        (self.z0.powi(-2) + c * s * t).powf(-0.5)
    }

    /// Upper envelope z₊(t).
    pub fn upper(&self, t: f64) -> f64 {
        self.at(self.c_plus, t)
    }

    /// Lower envelope z₋(t).
    pub fn lower(&self, t: f64) -> f64 {
        self.at(self.c_minus, t)
    }

    /// Largest violation of ⅕z₋ ≤ |z| ≤ 5z₊ along a trajectory (zero when confined).
    pub fn band_violation(&self, traj: &Trajectory) -> f64 {
        traj.points
            .iter()
            .map(|p| {
                let r = p.z_norm_sq.sqrt();
                let t = p.t - traj.points[0].t;
                (0.2 * self.lower(t) - r).max(r - 5.0 * self.upper(t)).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct EquipartitionPrediction {
    pub mass0: f64,
    pub mass_inf: f64,
    pub lambda_inf: f64,
    pub gain: f64,
}

/// N_∞ = N(λ₀) + ½|z₀|² and λ_∞ = N⁻¹(N_∞).
pub fn predict_equipartition(model: &ReducedModel, lambda0: f64, z0: &[C64]) -> Result<EquipartitionPrediction> {
    let m0 = model.mass(lambda0)?;
    let gain = 0.5 * z0.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let lambda_inf = model.lambda_of_mass(m0 + gain)?;
    Ok(EquipartitionPrediction {
        mass0: m0,
        mass_inf: m0 + gain,
        lambda_inf,
        gain,
    })
}
