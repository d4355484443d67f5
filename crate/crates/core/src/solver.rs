//! Conjugate gradients for symmetric positive (semi)definite operators given
//! as closures, with an optional projection onto a constraint subspace.

use crate::error::SolverError;
use crate::grid::{dot, sum_sq};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `|r| <= tol |b|`.
    pub tol: f64,
    /// Iteration cap; `None` picks `10 * n`.
    pub max_iter: Option<usize>,
}

impl CgOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, max_iter: None }
    }
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `A x = b` starting from the contents of `x`.
///
/// `project` is applied to `b`, to the initial guess and to every search
/// direction, so the iteration stays inside the subspace it preserves.
pub fn conjugate_gradient<A, P>(
    mut apply: A,
    project: P,
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
) -> Result<CgStats, SolverError>
where
    A: FnMut(&[f64], &mut [f64]),
    P: Fn(&mut [f64]),
{
    let n = b.len();
    debug_assert_eq!(x.len(), n);
    let max_iter = opts.max_iter.unwrap_or(10 * n).max(1);

    let mut rhs = b.to_vec();
    project(&mut rhs);
    let bnorm = sum_sq(&rhs).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats { iterations: 0, residual: 0.0 });
    }
    if x.iter().any(|v| !v.is_finite()) {
        x.iter_mut().for_each(|v| *v = 0.0);
    }
    project(x);

    let target = opts.tol * bnorm;
    let mut r = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;

    // Outer loop restarts from the true residual whenever the recursive
    // residual claims convergence but the true one disagrees.
    loop {
        apply(x, &mut ap);
        for i in 0..n {
            r[i] = rhs[i] - ap[i];
        }
        project(&mut r);
        let mut rr = sum_sq(&r);
        if rr.sqrt() <= target {
            return Ok(CgStats { iterations, residual: rr.sqrt() / bnorm });
        }
        if iterations >= max_iter {
            return Err(SolverError::NotConverged { iterations, residual: rr.sqrt() / bnorm });
        }
        p.copy_from_slice(&r);
        loop {
            apply(&p, &mut ap);
            project(&mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(SolverError::NotConverged { iterations, residual: rr.sqrt() / bnorm });
            }
            let alpha = rr / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            let rr_new = sum_sq(&r);
            if rr_new.sqrt() <= target || iterations >= max_iter {
                break;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        project(x);
    }
}

/// Removes the arithmetic mean (the cell-average on a uniform grid).
pub fn remove_mean(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

pub fn no_projection(_: &mut [f64]) {}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(x: &[f64], y: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let l = if i > 0 { x[i - 1] } else { 0.0 };
            let r = if i + 1 < n { x[i + 1] } else { 0.0 };
            y[i] = 2.0 * x[i] - l - r;
        }
    }

    #[test]
    fn solves_spd_tridiagonal_system() {
        let n = 50;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        tridiag(&xs, &mut b);
        let mut x = vec![0.0; n];
        let stats = conjugate_gradient(tridiag, no_projection, &b, &mut x, CgOptions::with_tol(1e-13)).unwrap();
        assert!(stats.residual <= 1e-13);
        for (a, e) in x.iter().zip(&xs) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let mut x = vec![1.0; 8];
        let stats = conjugate_gradient(tridiag, no_projection, &[0.0; 8], &mut x, CgOptions::default()).unwrap();
        assert_eq!(stats.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singular_operator_on_mean_zero_subspace() {
        // periodic second difference: kernel is the constants
        let op = |x: &[f64], y: &mut [f64]| {
            let n = x.len();
            for i in 0..n {
                y[i] = 2.0 * x[i] - x[(i + n - 1) % n] - x[(i + 1) % n];
            }
        };
        let n = 32;
        let mut xs: Vec<f64> = (0..n).map(|i| ((i * i) % 7) as f64).collect();
        remove_mean(&mut xs);
        let mut b = vec![0.0; n];
        op(&xs, &mut b);
        let mut x = vec![0.0; n];
        conjugate_gradient(op, remove_mean, &b, &mut x, CgOptions::with_tol(1e-12)).unwrap();
        for (a, e) in x.iter().zip(&xs) {
            assert!((a - e).abs() < 1e-8);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let n = 64;
        let b: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut x = vec![0.0; n];
        let err = conjugate_gradient(tridiag, no_projection, &b, &mut x, CgOptions { tol: 1e-14, max_iter: Some(3) })
            .unwrap_err();
        assert!(matches!(err, SolverError::NotConverged { iterations: 3, .. }));
    }
}
