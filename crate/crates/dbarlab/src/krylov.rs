//! Restarted GMRES over real or complex vectors.

use num_complex::Complex64;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
{
    fn zero() -> Self;
    fn from_real(x: f64) -> Self;
    fn conj(self) -> Self;
    fn abs(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn conj(self) -> Self {
        self
    }
    fn abs(self) -> f64 {
        f64::abs(self)
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn abs(self) -> f64 {
        self.norm()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GmresParams {
    pub restart: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GmresParams {
    fn default() -> Self {
        GmresParams {
            restart: 30,
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GmresOutcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
    /// Ratio of extreme singular values of the last Hessenberg matrix.
    pub condition_estimate: f64,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x.conj() * y)
}

fn norm<T: Scalar>(a: &[T]) -> f64 {
    a.iter().map(|x| x.abs() * x.abs()).sum::<f64>().sqrt()
}

fn givens<T: Scalar>(a: T, b: T) -> (T, T, T) {
    // returns (c, s, r) with [c s; -s̄ c] [a; b] = [r; 0], c real
    let na = a.abs();
    let nb = b.abs();
    if nb == 0.0 {
        return (T::from_real(1.0), T::zero(), a);
    }
    if na == 0.0 {
        return (T::zero(), T::from_real(1.0), b);
    }
    let t = (na * na + nb * nb).sqrt();
    let c = T::from_real(na / t);
    let phase = a / T::from_real(na);
    let s = phase * b.conj() / T::from_real(t);
    (c, s, phase * T::from_real(t))
}

/// Solves `A x = b` for the operator `apply`, starting from `x0`.
pub fn gmres<T: Scalar, F>(apply: F, b: &[T], x0: Vec<T>, params: GmresParams) -> GmresOutcome<T>
where
    F: Fn(&[T]) -> Vec<T>,
{
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0;
    if bnorm == 0.0 {
        return GmresOutcome {
            x: vec![T::zero(); n],
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
            condition_estimate: 1.0,
        };
    }
    let m = params.restart.max(1);
    let mut total = 0usize;
    let mut cond = 1.0f64;
    loop {
        let ax = apply(&x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        let beta = norm(&r);
        let rel = beta / bnorm;
        if rel <= params.tol || total >= params.max_iter {
            return GmresOutcome {
                x,
                iterations: total,
                rel_residual: rel,
                converged: rel <= params.tol,
                condition_estimate: cond,
            };
        }
        let mut basis: Vec<Vec<T>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|&v| v / T::from_real(beta)).collect());
        let mut hess: Vec<Vec<T>> = Vec::with_capacity(m);
        let mut rot: Vec<(T, T)> = Vec::with_capacity(m);
        let mut g = vec![T::zero(); m + 1];
        g[0] = T::from_real(beta);
        let mut steps = 0;
        for j in 0..m {
            let mut w = apply(&basis[j]);
            let mut col = vec![T::zero(); j + 2];
            // modified Gram-Schmidt, applied twice for stability
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let hij = dot(q, &w);
                    col[i] = col[i] + hij;
                    for (wk, &qk) in w.iter_mut().zip(q) {
                        *wk = *wk - hij * qk;
                    }
                }
            }
            let wn = norm(&w);
            col[j + 1] = T::from_real(wn);
            hess.push(col.clone());
            for (i, &(c, s)) in rot.iter().enumerate() {
                let a = col[i];
                let bb = col[i + 1];
                col[i] = c * a + s * bb;
                col[i + 1] = -(s.conj()) * a + c * bb;
            }
            let (c, s, rr) = givens(col[j], col[j + 1]);
            col[j] = rr;
            col[j + 1] = T::zero();
            rot.push((c, s));
            let gj = g[j];
            g[j] = c * gj;
            g[j + 1] = -(s.conj()) * gj;
            hess[j] = col;
            steps = j + 1;
            total += 1;
            let res = g[j + 1].abs() / bnorm;
            if wn > 0.0 {
                basis.push(w.iter().map(|&v| v / T::from_real(wn)).collect());
            }
            if res <= params.tol || wn == 0.0 || total >= params.max_iter {
                break;
            }
        }
        // back substitution on the rotated (upper triangular) Hessenberg
        let mut y = vec![T::zero(); steps];
        for i in (0..steps).rev() {
            let mut s = g[i];
            for k in (i + 1)..steps {
                s = s - hess[k][i] * y[k];
            }
            y[i] = s / hess[i][i];
        }
        let diag: Vec<f64> = (0..steps).map(|i| hess[i][i].abs()).collect();
        let dmax = diag.iter().cloned().fold(0.0, f64::max);
        let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if dmin > 0.0 {
            cond = cond.max(dmax / dmin);
        } else {
            cond = f64::INFINITY;
        }
        for (i, yi) in y.iter().enumerate() {
            for (xk, &qk) in x.iter_mut().zip(&basis[i]) {
                *xk = *xk + *yi * qk;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_real_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = vec![1.0, 2.0, 3.0];
        let out = gmres(
            |x: &[f64]| (0..3).map(|i| (0..3).map(|j| a[i][j] * x[j]).sum()).collect(),
            &b,
            vec![0.0; 3],
            GmresParams::default(),
        );
        assert!(out.converged);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i][j] * out.x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn solves_complex_system_with_restarts() {
        let n = 40;
        let apply = |x: &[Complex64]| -> Vec<Complex64> {
            (0..n)
                .map(|i| {
                    let mut s = x[i] * Complex64::new(2.0, 0.5);
                    if i > 0 {
                        s += x[i - 1] * 0.4;
                    }
                    if i + 1 < n {
                        s -= x[i + 1] * Complex64::new(0.0, 0.3);
                    }
                    s
                })
                .collect()
        };
        let b: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, 1.0)).collect();
        let params = GmresParams {
            restart: 5,
            tol: 1e-12,
            max_iter: 500,
        };
        let out = gmres(apply, &b, vec![Complex64::new(0.0, 0.0); n], params);
        assert!(out.converged, "residual {}", out.rel_residual);
        let r = apply(&out.x);
        let err: f64 = r.iter().zip(&b).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9);
    }
}
