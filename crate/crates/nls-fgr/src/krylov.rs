//! Matrix-free Krylov solvers on plain complex vectors.
//!
//! All solvers use the unweighted Euclidean inner product; grid quadrature
//! weights cancel in relative residuals.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::grid::dot;

#[derive(Debug, Clone, Copy)]
pub struct KrylovConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig {
            tol: 1e-12,
            max_iter: 2000,
            restart: 80,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovStats {
    pub iterations: usize,
    /// Final relative residual ||b - A x|| / ||b||.
    pub residual: f64,
}

fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Restarted GMRES with right preconditioning: solves A x = b.
///
/// `x` holds the initial guess on entry and the solution on exit.
pub fn gmres<A, M>(
    mut apply: A,
    mut precond: M,
    b: &[C64],
    x: &mut [C64],
    cfg: &KrylovConfig,
    what: &str,
) -> Result<KrylovStats>
where
    A: FnMut(&[C64], &mut [C64]),
    M: FnMut(&[C64], &mut [C64]),
{
    let n = b.len();
    let bnorm = norm(b);
    let zero = C64::new(0.0, 0.0);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = zero);
        return Ok(KrylovStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let m = cfg.restart.max(1);
    let mut r = vec![zero; n];
    let mut w = vec![zero; n];
    let mut z = vec![zero; n];
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
    let mut total = 0;
    let mut rel;
    let mut previous = f64::INFINITY;
    loop {
        apply(x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= cfg.tol {
            return Ok(KrylovStats {
                iterations: total,
                residual: rel,
            });
        }
        // a full restart cycle without progress means rounding-level stagnation
        if total >= cfg.max_iter || rel > 0.9 * previous {
            return Err(Error::no_convergence(what, total, rel));
        }
        previous = rel;
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![zero; m]; m + 1];
        let mut cs = vec![zero; m];
        let mut sn = vec![zero; m];
        let mut g = vec![zero; m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for j in 0..m {
            precond(&basis[j], &mut z);
            apply(&z, &mut w);
            for i in 0..=j {
                let hij = dot(&w, &basis[i]);
                hess[i][j] = hij;
                for (wv, bv) in w.iter_mut().zip(&basis[i]) {
                    *wv -= hij * bv;
                }
            }
            // second Gram-Schmidt pass keeps the basis orthogonal in long cycles
            for i in 0..=j {
                let c = dot(&w, &basis[i]);
                hess[i][j] += c;
                for (wv, bv) in w.iter_mut().zip(&basis[i]) {
                    *wv -= c * bv;
                }
            }
            let hn = norm(&w);
            hess[j + 1][j] = C64::new(hn, 0.0);
            for i in 0..j {
                let t = cs[i].conj() * hess[i][j] + sn[i].conj() * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let a = hess[j][j];
            let bb = hess[j + 1][j];
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if den == 0.0 {
                cs[j] = C64::new(1.0, 0.0);
                sn[j] = zero;
            } else {
                cs[j] = a / den;
                sn[j] = bb / den;
            }
            hess[j][j] = cs[j].conj() * a + sn[j].conj() * bb;
            hess[j + 1][j] = zero;
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j].conj() * g[j];
            total += 1;
            k_used = j + 1;
            rel = g[j + 1].norm() / bnorm;
            if rel <= cfg.tol || total >= cfg.max_iter || hn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![zero; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in i + 1..k_used {
                s -= hess[i][l] * y[l];
            }
            y[i] = s / hess[i][i];
        }
        let mut upd = vec![zero; n];
        for (l, yl) in y.iter().enumerate() {
            for (u, v) in upd.iter_mut().zip(&basis[l]) {
                *u += yl * v;
            }
        }
        precond(&upd, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
    }
}

/// Preconditioned conjugate gradients for Hermitian positive definite A.
pub fn pcg<A, M>(
    mut apply: A,
    mut precond: M,
    b: &[C64],
    x: &mut [C64],
    cfg: &KrylovConfig,
    what: &str,
) -> Result<KrylovStats>
where
    A: FnMut(&[C64], &mut [C64]),
    M: FnMut(&[C64], &mut [C64]),
{
    let n = b.len();
    let zero = C64::new(0.0, 0.0);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = zero);
        return Ok(KrylovStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut ax = vec![zero; n];
    apply(x, &mut ax);
    let mut r: Vec<C64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z = vec![zero; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&z, &r).re;
    let mut ap = vec![zero; n];
    for it in 0..cfg.max_iter {
        let rel = norm(&r) / bnorm;
        if rel <= cfg.tol {
            return Ok(KrylovStats {
                iterations: it,
                residual: rel,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&ap, &p).re;
        if pap <= 0.0 {
            return Err(Error::invalid(format!("{what}: operator not positive definite")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precond(&r, &mut z);
        let rz_new = dot(&z, &r).re;
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = norm(&r) / bnorm;
    if rel <= cfg.tol {
        Ok(KrylovStats {
            iterations: cfg.max_iter,
            residual: rel,
        })
    } else {
        Err(Error::no_convergence(what, cfg.max_iter, rel))
    }
}

/// Result of a symmetric Lanczos run: Ritz values and vectors of the operator.
#[derive(Debug, Clone)]
pub struct RitzPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
}

/// Lanczos with full reorthogonalization for a Hermitian operator.
///
/// Returns the `k` Ritz pairs with the largest Ritz values.
pub fn lanczos_largest<A>(
    mut apply: A,
    start: &[C64],
    steps: usize,
    k: usize,
) -> Result<RitzPairs>
where
    A: FnMut(&[C64], &mut [C64]) -> Result<()>,
{
    let n = start.len();
    let zero = C64::new(0.0, 0.0);
    let s0 = norm(start);
    if s0 == 0.0 {
        return Err(Error::invalid("Lanczos start vector is zero"));
    }
    let mut q: Vec<Vec<C64>> = vec![start.iter().map(|v| v / s0).collect()];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![zero; n];
    for j in 0..steps.min(n) {
        apply(&q[j], &mut w)?;
        let a = dot(&w, &q[j]).re;
        alpha.push(a);
        for _ in 0..2 {
            for qi in &q {
                let c = dot(&w, qi);
                for (wv, qv) in w.iter_mut().zip(qi) {
                    *wv -= c * qv;
                }
            }
        }
        let b = norm(&w);
        if b < 1e-14 * a.abs().max(1.0) || j + 1 == steps.min(n) {
            break;
        }
        beta.push(b);
        q.push(w.iter().map(|v| v / b).collect());
    }
    let m = alpha.len();
    let (vals, vecs) = symmetric_tridiagonal_eigen(&alpha, &beta[..m.saturating_sub(1)]);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    let take = k.min(m);
    let mut values = Vec::with_capacity(take);
    let mut vectors = Vec::with_capacity(take);
    for &idx in order.iter().take(take) {
        values.push(vals[idx]);
        let mut v = vec![zero; n];
        for (l, ql) in q.iter().enumerate().take(m) {
            let c = vecs[l][idx];
            for (vi, qv) in v.iter_mut().zip(ql) {
                *vi += c * qv;
            }
        }
        vectors.push(v);
    }
    Ok(RitzPairs { values, vectors })
}

/// Eigen-decomposition of a symmetric tridiagonal matrix by cyclic Jacobi.
///
/// Returns eigenvalues and the matrix of eigenvectors stored by rows
/// (`vecs[i][j]` is component i of eigenvector j).
pub fn symmetric_tridiagonal_eigen(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = diag.len();
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..m {
        a[i][i] = diag[i];
        if i + 1 < m {
            a[i][i + 1] = off[i];
            a[i + 1][i] = off[i];
        }
    }
    jacobi_eigen(a)
}

/// Cyclic Jacobi eigen-solver for a dense real symmetric matrix.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = a.len();
    let mut v = vec![vec![0.0; m]; m];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut offn = 0.0;
        let mut scale = 0.0;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    offn += a[i][j] * a[i][j];
                }
                scale += a[i][j] * a[i][j];
            }
        }
        if offn <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..m {
            for q in p + 1..m {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..m {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..m {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..m).map(|i| a[i][i]).collect(), v)
}

/// Solves a small dense complex system by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<C64>>, mut b: Vec<C64>) -> Result<Vec<C64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].norm().partial_cmp(&a[j][col].norm()).unwrap())
            .unwrap();
        if a[piv][col].norm() < 1e-300 {
            return Err(Error::invalid("singular dense system"));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                let v = a[col][k];
                a[row][k] -= f * v;
            }
            let bc = b[col];
            b[row] -= f * bc;
        }
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= a[i][k] * x[k];
        }
        x[i] = s / a[i][i];
    }
    Ok(x)
}
