//! Matrix-free Krylov solvers.
//!
//! Both routines only see the operator through a closure, so the Gramians of
//! the observability and control modules never have to be assembled.

use nalgebra::{DMatrix, DVector};

/// Extreme Ritz pairs of a symmetric operator.
#[derive(Debug, Clone)]
pub struct LanczosOutcome {
    pub min: f64,
    pub max: f64,
    pub min_vector: DVector<f64>,
    pub max_vector: DVector<f64>,
    pub iterations: usize,
    /// Residual bound `|beta_m s_m|` of the smallest Ritz pair.
    pub min_residual: f64,
    pub converged: bool,
}

/// Lanczos iteration with full reorthogonalization.
///
/// # Arguments
/// * `apply` - symmetric operator `x -> A x`
/// * `start` - nonzero starting vector
/// * `max_iter` - Krylov dimension cap (the operator dimension is an implicit cap)
/// * `tol` - relative residual target for both extreme Ritz pairs
///
/// # Returns
/// The smallest and largest Ritz values with vectors. `converged` is false
/// when the cap was reached before the residual target.
pub fn lanczos_extremes<F>(mut apply: F, start: &DVector<f64>, max_iter: usize, tol: f64) -> LanczosOutcome
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = start.len();
    let cap = max_iter.min(n).max(1);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(cap);
    let mut alpha = Vec::with_capacity(cap);
    let mut beta: Vec<f64> = Vec::with_capacity(cap);
    let mut q = start.normalize();
    let mut last = None;
    for j in 0..cap {
        basis.push(q.clone());
        let mut w = apply(&q);
        let a = q.dot(&w);
        alpha.push(a);
        for _ in 0..2 {
            for v in &basis {
                let c = v.dot(&w);
                w.axpy(-c, v, 1.0);
            }
        }
        let b = w.norm();
        let m = j + 1;
        let out = ritz(&basis, &alpha, &beta, b);
        let scale = out.max.abs().max(out.min.abs()).max(f64::MIN_POSITIVE);
        let done = b <= 1e-14 * scale || (out.min_residual <= tol * scale && out.max_residual <= tol * scale);
        if done || m == cap {
            let converged = done || m == n;
            last = Some(LanczosOutcome {
                min: out.min,
                max: out.max,
                min_vector: out.min_vector,
                max_vector: out.max_vector,
                iterations: m,
                min_residual: out.min_residual,
                converged,
            });
            break;
        }
        beta.push(b);
        q = w / b;
    }
    last.expect("at least one Lanczos step")
}

struct Ritz {
    min: f64,
    max: f64,
    min_vector: DVector<f64>,
    max_vector: DVector<f64>,
    min_residual: f64,
    max_residual: f64,
}

fn ritz(basis: &[DVector<f64>], alpha: &[f64], beta: &[f64], next_beta: f64) -> Ritz {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = t.symmetric_eigen();
    let (mut imin, mut imax) = (0, 0);
    for i in 0..m {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[imax] {
            imax = i;
        }
    }
    let lift = |i: usize| {
        let s = eig.eigenvectors.column(i);
        let mut v = DVector::zeros(basis[0].len());
        for (k, b) in basis.iter().enumerate() {
            v.axpy(s[k], b, 1.0);
        }
        (v, (next_beta * s[m - 1]).abs())
    };
    let (min_vector, min_residual) = lift(imin);
    let (max_vector, max_residual) = lift(imax);
    Ritz {
        min: eig.eigenvalues[imin],
        max: eig.eigenvalues[imax],
        min_vector,
        max_vector,
        min_residual,
        max_residual,
    }
}

/// Result of a conjugate gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// Final residual norm relative to the right hand side.
    pub relative_residual: f64,
    /// Relative residual after each iteration, starting with the initial one.
    pub history: Vec<f64>,
    pub converged: bool,
}

/// Conjugate gradients for an operator self-adjoint in `<x, y> = sum_i m_i x_i y_i`.
///
/// `metric` holds the positive diagonal `m`. The iteration stops once the
/// metric norm of the residual drops below `tol` times that of `rhs`.
pub fn conjugate_gradient<F>(
    mut apply: F,
    rhs: &DVector<f64>,
    metric: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> CgOutcome
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let inner = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        a.iter().zip(b.iter()).zip(metric.iter()).map(|((x, y), m)| x * y * m).sum()
    };
    let n = rhs.len();
    let mut x = DVector::zeros(n);
    let bnorm = inner(rhs, rhs).sqrt();
    if bnorm == 0.0 {
        return CgOutcome { solution: x, iterations: 0, relative_residual: 0.0, history: vec![0.0], converged: true };
    }
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = inner(&r, &r);
    let mut history = vec![1.0];
    let mut iterations = 0;
    while iterations < max_iter {
        let kp = apply(&p);
        let pkp = inner(&p, &kp);
        if pkp <= 0.0 {
            break;
        }
        let a = rr / pkp;
        x.axpy(a, &p, 1.0);
        r.axpy(-a, &kp, 1.0);
        let rr_new = inner(&r, &r);
        iterations += 1;
        let rel = rr_new.sqrt() / bnorm;
        history.push(rel);
        if rel <= tol {
            return CgOutcome { solution: x, iterations, relative_residual: rel, history, converged: true };
        }
        let beta = rr_new / rr;
        rr = rr_new;
        p = &r + beta * &p;
    }
    let rel = *history.last().unwrap();
    CgOutcome { solution: x, iterations, relative_residual: rel, history, converged: rel <= tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.4);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn lanczos_matches_dense_spectrum() {
        let a = spd(30);
        let start = DVector::from_fn(30, |i, _| 1.0 + i as f64 * 0.1);
        let out = lanczos_extremes(|x| &a * x, &start, 30, 1e-12);
        let eig = a.clone().symmetric_eigen();
        assert!((out.min - eig.eigenvalues.min()).abs() < 1e-9);
        assert!((out.max - eig.eigenvalues.max()).abs() < 1e-9);
        assert!(out.converged);
    }

    #[test]
    fn cg_solves_weighted_system() {
        let a = spd(20);
        let m = DVector::from_fn(20, |i, _| 1.0 + i as f64);
        let minv = m.map(|v| 1.0 / v);
        let b = DVector::from_fn(20, |i, _| (i as f64).sin());
        // Operator M^{-1} A is self-adjoint in the M inner product.
        let out = conjugate_gradient(|x| (&a * x).component_mul(&minv), &b.component_mul(&minv), &m, 1e-12, 200);
        let x = a.clone().lu().solve(&b).unwrap();
        assert!(out.converged);
        assert!((out.solution - x).norm() < 1e-9);
    }
}
