//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use cascade_lab::dynamics::{CascadeState, CouplingOperator};
use cascade_lab::Space;
use nalgebra::{DMatrix, DVector};

/// Dense first-order generator on `(u1, u2, v1, v2)`.
pub fn dense_generator(space: &Space, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = space.n_modes();
    let mut g = DMatrix::zeros(4 * n, 4 * n);
    for i in 0..n {
        let l = space.eigenvalues()[i];
        g[(i, 2 * n + i)] = 1.0;
        g[(n + i, 3 * n + i)] = 1.0;
        g[(2 * n + i, i)] = -l;
        g[(3 * n + i, n + i)] = -l;
        for j in 0..n {
            g[(3 * n + i, j)] -= c[(i, j)];
        }
    }
    g
}

/// `exp(t G) x` by the dense matrix exponential.
pub fn dense_evolve(space: &Space, c: &CouplingOperator, x: &CascadeState, t: f64) -> CascadeState {
    let g = dense_generator(space, &c.matrix) * t;
    CascadeState::from_vector(&(g.exp() * x.to_vector()))
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Bump on `(0.2, 0.3)` with margin 0.05 and unit height, core the plateau.
pub fn bump_coupling(space: &Space) -> CouplingOperator {
    let c = cascade_lab::Coefficient::plateau(0.2, 0.3, 0.05, 1.0).unwrap();
    CouplingOperator::new(space, &c).unwrap()
}

/// Interior observer on `(0.6, 0.7)` with a unit plateau weight.
pub fn interior_observer(space: &Space) -> cascade_lab::dynamics::Observer {
    let b = cascade_lab::Coefficient::plateau(0.6, 0.7, 0.05, 1.0).unwrap();
    cascade_lab::dynamics::Observer::interior(space, &b, Some((0.6, 0.7))).unwrap()
}

pub fn reference_geometry(boundary: bool) -> cascade_lab::dynamics::Geometry {
    use cascade_lab::dynamics::{Geometry, ObserverSpec};
    Geometry {
        coupling: Some(cascade_lab::Coefficient::plateau(0.2, 0.3, 0.05, 1.0).unwrap()),
        core: (0.2, 0.3),
        observer: if boundary {
            ObserverSpec::Boundary { left: 1.0, right: 0.0 }
        } else {
            ObserverSpec::Interior {
                weight: cascade_lab::Coefficient::plateau(0.6, 0.7, 0.05, 1.0).unwrap(),
                region: Some((0.6, 0.7)),
            }
        },
    }
}

/// Gramian `int_0^T e^{tG}^T Q e^{tG} dt` by matrix exponentials and
/// composite Gauss-Legendre in time.
pub fn dense_gramian(space: &Space, c: &CouplingOperator, q: &DMatrix<f64>, offset: usize, t: f64, panels: usize) -> DMatrix<f64> {
    let n = space.n_modes();
    let gen = dense_generator(space, &c.matrix);
    let (x, w) = cascade_lab::spectral::gauss_legendre(6);
    let h = t / panels as f64;
    let mut out = DMatrix::zeros(4 * n, 4 * n);
    for p in 0..panels {
        for (xi, wi) in x.iter().zip(&w) {
            let s = h * (p as f64 + 0.5 * (xi + 1.0));
            let e = (&gen * s).exp();
            let y = e.rows(offset, n).into_owned();
            out += y.transpose() * q * &y * (0.5 * h * wi);
        }
    }
    out
}
