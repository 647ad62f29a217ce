//! Two-component fields (u, v) on which the linearized operator acts.

use num_complex::Complex64 as C64;

use crate::grid::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub u: Vec<C64>,
    pub v: Vec<C64>,
}

impl Pair {
    pub fn zeros(n: usize) -> Pair {
        Pair {
            u: vec![C64::new(0.0, 0.0); n],
            v: vec![C64::new(0.0, 0.0); n],
        }
    }

    pub fn from_real(u: &[f64], v: &[f64]) -> Pair {
        Pair {
            u: u.iter().map(|&x| C64::new(x, 0.0)).collect(),
            v: v.iter().map(|&x| C64::new(x, 0.0)).collect(),
        }
    }

    /// (a u, b v) for real profiles u, v and complex scalars a, b.
    pub fn scaled_real(u: &[f64], a: C64, v: &[f64], b: C64) -> Pair {
        Pair {
            u: u.iter().map(|&x| a * x).collect(),
            v: v.iter().map(|&x| b * x).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Stacked representation [u; v] used by Krylov solvers.
    pub fn to_stacked(&self) -> Vec<C64> {
        let mut out = self.u.clone();
        out.extend_from_slice(&self.v);
        out
    }

    pub fn from_stacked(s: &[C64]) -> Pair {
        let n = s.len() / 2;
        Pair {
            u: s[..n].to_vec(),
            v: s[n..].to_vec(),
        }
    }

    pub fn axpy(&mut self, a: C64, x: &Pair) {
        for (s, v) in self.u.iter_mut().zip(&x.u) {
            *s += a * v;
        }
        for (s, v) in self.v.iter_mut().zip(&x.v) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: C64) {
        self.u.iter_mut().for_each(|x| *x *= a);
        self.v.iter_mut().for_each(|x| *x *= a);
    }

    pub fn scaled(&self, a: C64) -> Pair {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn add(&self, other: &Pair) -> Pair {
        let mut out = self.clone();
        out.axpy(C64::new(1.0, 0.0), other);
        out
    }

    pub fn sub(&self, other: &Pair) -> Pair {
        let mut out = self.clone();
        out.axpy(C64::new(-1.0, 0.0), other);
        out
    }

    /// J (u, v) = (v, -u)
    pub fn apply_j(&self) -> Pair {
        Pair {
            u: self.v.clone(),
            v: self.u.iter().map(|x| -x).collect(),
        }
    }

    pub fn conj(&self) -> Pair {
        Pair {
            u: self.u.iter().map(|x| x.conj()).collect(),
            v: self.v.iter().map(|x| x.conj()).collect(),
        }
    }

    /// <X, Y> = ∫ (X₁ conj Y₁ + X₂ conj Y₂), with quadrature weight `vol`.
    pub fn inner(&self, other: &Pair, vol: f64) -> C64 {
        (dot(&self.u, &other.u) + dot(&self.v, &other.v)) * vol
    }

    pub fn norm(&self, vol: f64) -> f64 {
        self.inner(self, vol).re.max(0.0).sqrt()
    }
}

/// ∫ f g for a complex field f and a real profile g.
pub fn pair_real(f: &[C64], g: &[f64], vol: f64) -> C64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum::<C64>() * vol
}
