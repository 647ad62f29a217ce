//! Periodic tensor-product grids, spectral derivatives and quadrature.
//!
//! A [`Grid`] owns the FFT plans for its axis length; a [`Field`] is a
//! vector of complex samples tied to one grid. Samples are stored in
//! row-major order with the last axis varying fastest.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub struct Grid {
    d: usize,
    n: usize,
    lbox: f64,
    h: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k2: Vec<f64>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("d", &self.d)
            .field("n", &self.n)
            .field("lbox", &self.lbox)
            .finish()
    }
}

/// Metadata stored next to a serialized field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub n: usize,
    #[serde(rename = "Lbox")]
    pub lbox: f64,
}

impl Grid {
    pub fn new(d: usize, n: usize, lbox: f64) -> Result<Arc<Grid>> {
        if !(1..=3).contains(&d) {
            return Err(Error::invalid(format!("dimension {d} not in 1..=3")));
        }
        if n < 16 || !n.is_power_of_two() {
            return Err(Error::invalid(format!("n = {n} must be a power of two >= 16")));
        }
        if !(lbox > 0.0 && lbox.is_finite()) {
            return Err(Error::invalid(format!("Lbox = {lbox} must be positive")));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let h = 2.0 * lbox / n as f64;
        let k1 = wavenumbers(n, h);
        let len = n.pow(d as u32);
        let mut k2 = vec![0.0; len];
        for (idx, v) in k2.iter_mut().enumerate() {
            let mut rem = idx;
            let mut s = 0.0;
            for _ in 0..d {
                let i = rem % n;
                rem /= n;
                s += k1[i] * k1[i];
            }
            *v = s;
        }
        Ok(Arc::new(Grid {
            d,
            n,
            lbox,
            h,
            fwd,
            inv,
            k2,
        }))
    }

    pub fn from_spec(spec: GridSpec) -> Result<Arc<Grid>> {
        Grid::new(spec.d, spec.n, spec.lbox)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            d: self.d,
            n: self.n,
            lbox: self.lbox,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lbox(&self) -> f64 {
        self.lbox
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Quadrature weight h^d.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    pub fn len(&self) -> usize {
        self.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k2.is_empty()
    }

    /// Axis coordinates x_j = -Lbox + j h.
    pub fn axis(&self) -> Vec<f64> {
        (0..self.n).map(|j| -self.lbox + self.h * j as f64).collect()
    }

    /// Angular wavenumbers along one axis in FFT order.
    pub fn axis_wavenumbers(&self) -> Vec<f64> {
        wavenumbers(self.n, self.h)
    }

    /// |k|^2 for every Fourier index, in the same layout as the samples.
    pub fn k_squared(&self) -> &[f64] {
        &self.k2
    }

    /// Largest |k|^2 on the grid.
    pub fn k2_max(&self) -> f64 {
        let kmax = std::f64::consts::PI / self.h;
        self.d as f64 * kmax * kmax
    }

    /// Coordinates of the sample with flat index `idx`.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        let mut rem = idx;
        for a in (0..self.d).rev() {
            let i = rem % self.n;
            rem /= self.n;
            out[a] = -self.lbox + self.h * i as f64;
        }
        out
    }

    /// |x|^2 at every sample.
    pub fn radius_squared(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                let p = self.point(i);
                p[..self.d].iter().map(|x| x * x).sum()
            })
            .collect()
    }

    pub fn same(&self, other: &Grid) -> bool {
        self.d == other.d && self.n == other.n && self.lbox == other.lbox
    }

    /// In-place forward transform (unnormalized).
    pub fn forward(&self, data: &mut [C64]) {
        self.transform(data, &self.fwd);
    }

    /// In-place inverse transform, normalized so that inverse(forward(f)) = f.
    pub fn inverse(&self, data: &mut [C64]) {
        self.transform(data, &self.inv);
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    fn transform(&self, data: &mut [C64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len());
        let n = self.n;
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        if self.d == 1 {
            plan.process_with_scratch(data, &mut scratch);
            return;
        }
        // last axis is contiguous
        for chunk in data.chunks_exact_mut(n) {
            plan.process_with_scratch(chunk, &mut scratch);
        }
        let mut line = vec![C64::new(0.0, 0.0); n];
        for axis in 0..self.d - 1 {
            let stride = n.pow((self.d - 1 - axis) as u32);
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    for (j, l) in line.iter_mut().enumerate() {
                        *l = data[base + off + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, l) in line.iter().enumerate() {
                        data[base + off + j * stride] = *l;
                    }
                }
            }
        }
    }

    /// Multiply by a Fourier symbol m(|k|^2) in place.
    pub fn apply_symbol<F: Fn(f64) -> C64>(&self, data: &mut [C64], symbol: F) {
        self.forward(data);
        for (v, &k2) in data.iter_mut().zip(&self.k2) {
            *v *= symbol(k2);
        }
        self.inverse(data);
    }

    /// Multiply by a real Fourier symbol m(|k|^2) in place.
    pub fn apply_real_symbol<F: Fn(f64) -> f64>(&self, data: &mut [C64], symbol: F) {
        self.forward(data);
        for (v, &k2) in data.iter_mut().zip(&self.k2) {
            *v *= symbol(k2);
        }
        self.inverse(data);
    }
}

fn wavenumbers(n: usize, h: f64) -> Vec<f64> {
    let dk = 2.0 * std::f64::consts::PI / (n as f64 * h);
    (0..n)
        .map(|j| {
            let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            // the Nyquist mode is treated symmetrically so the Laplacian stays real
            m * dk
        })
        .collect()
}

/// Sobolev order and polynomial weight for [`weighted_norm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedNormSpec {
    pub s: u32,
    pub nu: i32,
}

impl WeightedNormSpec {
    pub fn new(s: u32, nu: i32) -> Result<Self> {
        if s > 2 || ![-4, 0, 4].contains(&nu) {
            return Err(Error::invalid(format!("unsupported weighted norm (s={s}, nu={nu})")));
        }
        Ok(WeightedNormSpec { s, nu })
    }
}

#[derive(Clone)]
pub struct Field {
    grid: Arc<Grid>,
    data: Vec<C64>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Field")
            .field("grid", &self.grid)
            .field("norm", &self.norm())
            .finish()
    }
}

impl Field {
    pub fn zeros(grid: &Arc<Grid>) -> Field {
        Field {
            grid: grid.clone(),
            data: vec![C64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_vec(grid: &Arc<Grid>, data: Vec<C64>) -> Result<Field> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "sample count {} does not match grid size {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Field {
            grid: grid.clone(),
            data,
        })
    }

    pub fn from_real(grid: &Arc<Grid>, re: &[f64]) -> Result<Field> {
        Field::from_vec(grid, re.iter().map(|&r| C64::new(r, 0.0)).collect())
    }

    pub fn from_fn<F: Fn(&[f64]) -> C64>(grid: &Arc<Grid>, f: F) -> Field {
        let d = grid.dim();
        let data = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                f(&p[..d])
            })
            .collect();
        Field {
            grid: grid.clone(),
            data,
        }
    }

    pub fn from_real_fn<F: Fn(&[f64]) -> f64>(grid: &Arc<Grid>, f: F) -> Field {
        Field::from_fn(grid, |x| C64::new(f(x), 0.0))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn re(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.im).collect()
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid.same(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn inner(&self, other: &Field) -> Result<C64> {
        inner_product(self, other)
    }

    pub fn norm(&self) -> f64 {
        (self.grid.cell_volume() * self.data.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&mut self, a: C64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: C64) -> Field {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// self += a * x
    pub fn axpy(&mut self, a: C64, x: &Field) -> Result<()> {
        self.check_same_grid(x)?;
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
        Ok(())
    }

    pub fn map<F: Fn(C64) -> C64>(&self, f: F) -> Field {
        Field {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn conj(&self) -> Field {
        self.map(|v| v.conj())
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field {
            grid: self.grid.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn laplacian(&self) -> Field {
        let mut data = self.data.clone();
        self.grid.apply_real_symbol(&mut data, |k2| -k2);
        Field {
            grid: self.grid.clone(),
            data,
        }
    }

    /// Largest modulus over the outermost layer of grid cells.
    pub fn boundary_max(&self) -> f64 {
        let n = self.grid.n();
        let d = self.grid.dim();
        let mut m: f64 = 0.0;
        for (idx, v) in self.data.iter().enumerate() {
            let mut rem = idx;
            let mut edge = false;
            for _ in 0..d {
                let i = rem % n;
                rem /= n;
                if i == 0 || i == n - 1 {
                    edge = true;
                }
            }
            if edge {
                m = m.max(v.norm());
            }
        }
        m
    }

    /// Fails when the field is not negligible at the box boundary.
    pub fn check_decay(&self, tol: f64) -> Result<()> {
        let b = self.boundary_max();
        if b > tol {
            Err(Error::invalid(format!(
                "profile reaches {b:.3e} at the box boundary (tolerance {tol:.1e}); enlarge Lbox"
            )))
        } else {
            Ok(())
        }
    }

    /// Writes `<base>.bin` (little-endian interleaved re/im doubles) and `<base>.json`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(16 * self.data.len());
        for v in &self.data {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        let mut f = fs::File::create(base.with_extension("bin"))?;
        f.write_all(&bytes)?;
        fs::write(
            base.with_extension("json"),
            serde_json::to_string_pretty(&self.grid.spec())?,
        )?;
        Ok(())
    }

    pub fn load(base: &Path) -> Result<Field> {
        let spec: GridSpec = serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
        let grid = Grid::from_spec(spec)?;
        Field::load_on(&grid, base)
    }

    /// Loads a field, checking that its sidecar matches `grid`.
    pub fn load_on(grid: &Arc<Grid>, base: &Path) -> Result<Field> {
        let spec: GridSpec = serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
        if spec != grid.spec() {
            return Err(Error::GridMismatch);
        }
        let mut bytes = Vec::new();
        fs::File::open(base.with_extension("bin"))?.read_to_end(&mut bytes)?;
        if bytes.len() != 16 * grid.len() {
            return Err(Error::invalid(format!(
                "{} holds {} bytes, expected {}",
                base.display(),
                bytes.len(),
                16 * grid.len()
            )));
        }
        let data = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                C64::new(re, im)
            })
            .collect();
        Field::from_vec(grid, data)
    }
}

pub fn apply_laplacian(f: &Field) -> Field {
    f.laplacian()
}

/// <f,g> = h^d sum f conj(g)
pub fn inner_product(f: &Field, g: &Field) -> Result<C64> {
    f.check_same_grid(g)?;
    Ok(dot(&f.data, &g.data) * f.grid.cell_volume())
}

/// Im <X,Y>
pub fn symplectic_form(x: &Field, y: &Field) -> Result<f64> {
    Ok(inner_product(x, y)?.im)
}

/// || <x>^nu (1 - Delta)^{s/2} f ||_2
pub fn weighted_norm(f: &Field, spec: WeightedNormSpec) -> f64 {
    let grid = &f.grid;
    let mut data = f.data.clone();
    if spec.s > 0 {
        let s = spec.s as f64;
        grid.apply_real_symbol(&mut data, |k2| (1.0 + k2).powf(0.5 * s));
    }
    if spec.nu != 0 {
        let nu = spec.nu as f64;
        for (v, r2) in data.iter_mut().zip(grid.radius_squared()) {
            *v *= (1.0 + r2).powf(0.5 * nu);
        }
    }
    (grid.cell_volume() * data.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
}

/// Unweighted sum of a_i conj(b_i).
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

/// Unweighted sum of a_i b_i for real vectors.
pub fn dot_real(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
