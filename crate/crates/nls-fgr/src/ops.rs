//! Matrix-free Schrödinger-type operators shared by the solvers.

use std::sync::Arc;

use num_complex::Complex64 as C64;

use crate::error::Result;
use crate::grid::Grid;
use crate::krylov::{gmres, KrylovConfig, KrylovStats};

/// out = (-Δ + w(x) + c) x
pub fn apply_schrodinger(grid: &Grid, w: &[f64], c: C64, x: &[C64], out: &mut [C64]) {
    out.copy_from_slice(x);
    grid.apply_real_symbol(out, |k2| k2);
    for i in 0..x.len() {
        out[i] += (w[i] + c) * x[i];
    }
}

/// out = m(|k|^2) x with a real Fourier multiplier.
pub fn apply_multiplier<F: Fn(f64) -> f64>(grid: &Grid, x: &[C64], out: &mut [C64], m: F) {
    out.copy_from_slice(x);
    grid.apply_real_symbol(out, m);
}

/// Solves (-Δ + w + c) u = f with GMRES preconditioned by (-Δ + p)^{-1}, p > 0.
pub fn solve_schrodinger(
    grid: &Arc<Grid>,
    w: &[f64],
    c: C64,
    f: &[C64],
    u: &mut [C64],
    precond_shift: f64,
    cfg: &KrylovConfig,
    what: &str,
) -> Result<KrylovStats> {
    let g = grid.clone();
    let g2 = grid.clone();
    gmres(
        |x, out| apply_schrodinger(&g, w, c, x, out),
        |x, out| apply_multiplier(&g2, x, out, |k2| 1.0 / (k2 + precond_shift)),
        f,
        u,
        cfg,
        what,
    )
}

pub fn to_complex(v: &[f64]) -> Vec<C64> {
    v.iter().map(|&r| C64::new(r, 0.0)).collect()
}

pub fn real_part(v: &[C64]) -> Vec<f64> {
    v.iter().map(|c| c.re).collect()
}
