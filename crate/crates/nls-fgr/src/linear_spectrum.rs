//! Bound states of -Δ + V and the continuous-spectrum projector.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dot, Field, Grid};
use crate::krylov::{gmres, jacobi_eigen, lanczos_largest, pcg, KrylovConfig};
use crate::ops::{apply_multiplier, apply_schrodinger, real_part, to_complex};
use crate::potential::Potential;

/// Energies within this distance of the threshold are not counted as bound.
pub const THRESHOLD_BUFFER: f64 = 1e-6;
/// Relative energy gap below which levels are grouped into one multiplicity class.
pub const DEGENERACY_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct LinearSpectrum {
    pub grid: Arc<Grid>,
    /// Sorted bound-state energies.
    pub energies: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Real eigenfunctions with unit L^2 norm.
    pub states: Vec<Vec<f64>>,
    /// Size of the multiplicity class of the first excited level.
    pub multiplicity: usize,
    pub warnings: Vec<String>,
}

impl LinearSpectrum {
    pub fn e0(&self) -> f64 {
        self.energies[0]
    }

    pub fn e1(&self) -> f64 {
        self.energies[1]
    }

    pub fn phi_lin(&self) -> &[f64] {
        &self.states[0]
    }

    /// Excited states of the first excited multiplicity class.
    pub fn xi_lin(&self) -> &[Vec<f64>] {
        &self.states[1..1 + self.multiplicity]
    }

    pub fn state_field(&self, j: usize) -> Field {
        Field::from_real(&self.grid, &self.states[j]).expect("state lives on the spectrum grid")
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_residual(&self) -> f64 {
        let w = self.grid.cell_volume();
        let mut m: f64 = 0.0;
        for (i, a) in self.states.iter().enumerate() {
            for (j, b) in self.states.iter().enumerate() {
                let g: f64 = w * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                let t = if i == j { 1.0 } else { 0.0 };
                m = m.max((g - t).abs());
            }
        }
        m
    }

    pub fn export(&self) -> Vec<SpectrumEntry> {
        self.energies
            .iter()
            .zip(&self.residuals)
            .enumerate()
            .map(|(j, (&e, &r))| SpectrumEntry {
                eigenvalue: e,
                residual: r,
                file_ref: format!("state_{j}"),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub eigenvalue: f64,
    pub residual: f64,
    #[serde(rename = "file-ref")]
    pub file_ref: String,
}

/// Computes the `k` lowest bound states of -Δ + V.
pub fn discrete_spectrum(pot: &Potential, k: usize) -> Result<LinearSpectrum> {
    if k < 2 {
        return Err(Error::invalid("at least two bound states are requested"));
    }
    let grid = pot.grid.clone();
    let n = grid.len();
    let vmin = pot.min();
    if vmin >= 0.0 {
        return Err(Error::Assumption("insufficient bound states: V has no well".into()));
    }
    let shift = vmin - 0.1;
    let w: Vec<f64> = pot.values.clone();
    let inner_cfg = KrylovConfig {
        tol: 1e-14,
        max_iter: 4000,
        restart: 60,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r2 = grid.radius_squared();
    let width2 = (grid.lbox() * 0.1).powi(2).max(1.0);
    let mut found: Vec<Vec<C64>> = Vec::new();
    for _round in 0..4 {
        let mut start: Vec<C64> = r2
            .iter()
            .map(|&r| C64::new(rng.gen::<f64>() - 0.5, 0.0) * (-r / width2).exp())
            .collect();
        deflate(&mut start, &found);
        let g = grid.clone();
        let deflated = found.clone();
        let steps = n.min(150 + 20 * k);
        let ritz = lanczos_largest(
            |x, out| {
                let mut b = x.to_vec();
                deflate(&mut b, &deflated);
                out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                pcg(
                    |y, o| apply_schrodinger(&g, &w, C64::new(-shift, 0.0), y, o),
                    |y, o| apply_multiplier(&g, y, o, |k2| 1.0 / (k2 - shift)),
                    &b,
                    out,
                    &inner_cfg,
                    "shift-invert inner solve",
                )?;
                deflate(out, &deflated);
                Ok(())
            },
            &start,
            steps,
            k + 4,
        )?;
        let mut added = 0;
        for (mu, v) in ritz.values.iter().zip(ritz.vectors) {
            if *mu <= 0.0 {
                continue;
            }
            let e = shift + 1.0 / mu;
            if e < -THRESHOLD_BUFFER {
                let mut v = v;
                deflate(&mut v, &found);
                let nv = dot(&v, &v).re.sqrt();
                if nv > 1e-3 {
                    v.iter_mut().for_each(|c| *c /= nv);
                    found.push(v);
                    added += 1;
                }
            }
        }
        if added == 0 || found.len() >= k + 2 {
            break;
        }
    }
    if found.len() < k {
        return Err(Error::Assumption(format!(
            "insufficient bound states: found {} below threshold, requested {k}",
            found.len()
        )));
    }
    let mut vecs: Vec<Vec<f64>> = found.iter().map(|v| real_part(v)).collect();
    let mut energies = rayleigh_ritz(&grid, &w, &mut vecs);
    for _ in 0..2 {
        for (v, e) in vecs.iter_mut().zip(&energies) {
            polish(&grid, &w, *e, v)?;
        }
        energies = rayleigh_ritz(&grid, &w, &mut vecs);
    }
    let vol = grid.cell_volume();
    let mut pairs: Vec<(f64, Vec<f64>)> = energies.into_iter().zip(vecs).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut warnings = Vec::new();
    pairs.retain(|(e, _)| {
        if *e >= -THRESHOLD_BUFFER {
            warnings.push(format!("level {e:.3e} is within the threshold buffer and is ignored"));
            false
        } else {
            true
        }
    });
    if pairs.len() < k {
        return Err(Error::Assumption(format!(
            "insufficient bound states: {} found, {k} requested",
            pairs.len()
        )));
    }
    // keep whole multiplicity classes
    let mut keep = k;
    while keep < pairs.len() && same_level(pairs[keep - 1].0, pairs[keep].0) {
        keep += 1;
    }
    pairs.truncate(keep);
    let mut energies = Vec::new();
    let mut states = Vec::new();
    let mut residuals = Vec::new();
    for (j, (e, mut v)) in pairs.into_iter().enumerate() {
        let nv = (vol * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        fix_sign(&grid, &mut v, j == 0);
        residuals.push(residual(&grid, &w, e, &v));
        energies.push(e);
        states.push(v);
    }
    let mut multiplicity = 1;
    while 1 + multiplicity < energies.len() && same_level(energies[1], energies[1 + multiplicity]) {
        multiplicity += 1;
    }
    if energies.len() > 1 + multiplicity {
        let next = energies[1 + multiplicity];
        if next > -1e-3 {
            warnings.push(format!("level {next:.3e} lies close to the threshold"));
        }
    }
    Ok(LinearSpectrum {
        grid,
        energies,
        residuals,
        states,
        multiplicity,
        warnings,
    })
}

fn same_level(a: f64, b: f64) -> bool {
    (a - b).abs() <= DEGENERACY_TOL * a.abs().max(b.abs()).max(1e-12)
}

fn deflate(v: &mut [C64], basis: &[Vec<C64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(v, q);
            for (a, b) in v.iter_mut().zip(q) {
                *a -= c * b;
            }
        }
    }
}

/// Orthonormalizes `vecs` and rotates them to Ritz vectors of -Δ + w; returns Ritz values.
fn rayleigh_ritz(grid: &Arc<Grid>, w: &[f64], vecs: &mut [Vec<f64>]) -> Vec<f64> {
    let m = vecs.len();
    for i in 0..m {
        for _ in 0..2 {
            for j in 0..i {
                let c: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = vecs.split_at_mut(i);
                for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                    *a -= c * b;
                }
            }
        }
        let nv: f64 = vecs[i].iter().map(|x| x * x).sum::<f64>().sqrt();
        vecs[i].iter_mut().for_each(|x| *x /= nv);
    }
    let applied: Vec<Vec<f64>> = vecs
        .iter()
        .map(|v| {
            let x = to_complex(v);
            let mut out = vec![C64::new(0.0, 0.0); x.len()];
            apply_schrodinger(grid, w, C64::new(0.0, 0.0), &x, &mut out);
            real_part(&out)
        })
        .collect();
    let mut h = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            h[i][j] = vecs[i].iter().zip(&applied[j]).map(|(a, b)| a * b).sum();
        }
    }
    for i in 0..m {
        for j in i + 1..m {
            let s = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = s;
            h[j][i] = s;
        }
    }
    let (vals, rot) = jacobi_eigen(h);
    let len = vecs[0].len();
    let mut rotated = vec![vec![0.0; len]; m];
    for (j, out) in rotated.iter_mut().enumerate() {
        for i in 0..m {
            let c = rot[i][j];
            for (o, v) in out.iter_mut().zip(&vecs[i]) {
                *o += c * v;
            }
        }
    }
    vecs.clone_from_slice(&rotated);
    vals
}

/// One step of inverse iteration at the current Ritz value.
fn polish(grid: &Arc<Grid>, w: &[f64], e: f64, v: &mut [f64]) -> Result<()> {
    let r = residual(grid, w, e, v) / (v.iter().map(|x| x * x).sum::<f64>() * grid.cell_volume()).sqrt();
    if r < 1e-12 {
        return Ok(());
    }
    let x = to_complex(v);
    let mut y = x.clone();
    let cfg = KrylovConfig {
        tol: 1e-13,
        max_iter: 3000,
        restart: 80,
    };
    let g = grid.clone();
    let g2 = grid.clone();
    let shift = e - 1e-9 * e.abs().max(1e-3);
    let pshift = 1.0 + e.abs();
    let _ = gmres(
        |a, out| apply_schrodinger(&g, w, C64::new(-shift, 0.0), a, out),
        |a, out| apply_multiplier(&g2, a, out, |k2| 1.0 / (k2 + pshift)),
        &x,
        &mut y,
        &cfg,
        "eigenvector polish",
    );
    let ny: f64 = y.iter().map(|c| c.re * c.re).sum::<f64>().sqrt();
    if ny.is_finite() && ny > 0.0 {
        for (a, b) in v.iter_mut().zip(&y) {
            *a = b.re / ny;
        }
    }
    Ok(())
}

/// ||(-Δ + w - e) v||_2 on the grid.
pub(crate) fn residual(grid: &Arc<Grid>, w: &[f64], e: f64, v: &[f64]) -> f64 {
    let x = to_complex(v);
    let mut out = vec![C64::new(0.0, 0.0); x.len()];
    apply_schrodinger(grid, w, C64::new(-e, 0.0), &x, &mut out);
    (grid.cell_volume() * out.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
}

fn fix_sign(grid: &Arc<Grid>, v: &mut [f64], ground: bool) {
    let s: f64 = if ground {
        v.iter().sum()
    } else {
        let moment: f64 = (0..v.len()).map(|i| grid.point(i)[0] * v[i]).sum();
        if moment.abs() > 1e-8 {
            moment
        } else {
            let (imax, _) = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |acc, (i, &x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
            v[imax]
        }
    };
    if s < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Assumption certificate for the trapped levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub two_levels: bool,
    pub resonance_condition: bool,
    /// 2 e1 - e0
    pub resonance_margin: f64,
    pub e0: f64,
    pub e1: Option<f64>,
    pub messages: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.two_levels && self.resonance_condition
    }
}

/// Checks the trapped-level hypotheses from a list of energies.
pub fn check_levels(energies: &[f64]) -> AssumptionReport {
    let mut messages = Vec::new();
    let e0 = energies.first().copied().unwrap_or(f64::NAN);
    let e1 = energies.get(1).copied();
    let two_levels = match e1 {
        Some(e1) if e0 < e1 && e1 < 0.0 => true,
        Some(e1) if e1 >= 0.0 => {
            messages.push("no trapped excited state".into());
            false
        }
        _ => {
            messages.push("fewer than two trapped levels".into());
            false
        }
    };
    let margin = e1.map(|e1| 2.0 * e1 - e0).unwrap_or(f64::NAN);
    let resonance_condition = two_levels && margin > 0.0;
    if two_levels && !resonance_condition {
        messages.push(format!("2e1 - e0 = {margin:.6} is not positive"));
    }
    AssumptionReport {
        two_levels,
        resonance_condition,
        resonance_margin: margin,
        e0,
        e1,
        messages,
    }
}

pub fn check_assumptions(spec: &LinearSpectrum) -> AssumptionReport {
    check_levels(&spec.energies)
}

/// f - Σ <f, u_j> u_j over every computed bound state.
pub fn project_continuous_lin(f: &Field, spec: &LinearSpectrum) -> Result<Field> {
    let mut out = f.clone();
    for j in 0..spec.states.len() {
        let u = spec.state_field(j);
        let c = f.inner(&u)?;
        out.axpy(-c, &u)?;
    }
    Ok(out)
}

/// Real-vector variant of [`project_continuous_lin`] for internal use.
pub(crate) fn project_continuous_slice(v: &mut [C64], spec: &LinearSpectrum) {
    let vol = spec.grid.cell_volume();
    for u in &spec.states {
        let c: C64 = v.iter().zip(u).map(|(a, b)| a * b).sum::<C64>() * vol;
        for (a, b) in v.iter_mut().zip(u) {
            *a -= c * b;
        }
    }
}
