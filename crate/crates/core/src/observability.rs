//! Observability Gramians of the cascade, their spectra, empirical and
//! theoretical observability constants, the one-dimensional geometric control
//! time and an inequality-by-inequality audit of the two-level energy argument.
//!
//! All Gramians measure the observation `int_0^T |B* U2|^2` of the second
//! component against the mixed energy `e_k(U1) + e_{k+1}(U2)` (level `k = 0`
//! by default). Energies are diagonal in the modal basis, so every
//! generalized eigenproblem is reduced to a standard one by diagonal scaling.

use crate::dynamics::{
    energy, evolve_batch, evolve_cascade, evolve_forced_wave, free_evolve, CascadeState, ComponentState,
    CouplingOperator, Driver, DynamicsError, Geometry, Observer, Region, StepKernel, TimeGrid,
};
use crate::linalg::lanczos_extremes;
use crate::Space;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservabilityError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("dense Gramian limited to {max} modes, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unobservable: {0}")]
    Unobservable(String),
    #[error("empty observation region")]
    EmptyRegion,
}

/// Largest truncation accepted by the dense routines.
pub const MAX_DENSE_MODES: usize = 64;

/// Diagonal of the quadratic form `e_k(U1) + e_{k+1}(U2)` on `(u1, u2, v1, v2)`.
pub fn norm_weights(space: &Space, level: i32) -> DVector<f64> {
    let n = space.n_modes();
    let l = space.eigenvalues();
    DVector::from_fn(4 * n, |i, _| {
        let (block, j) = (i / n, i % n);
        let p = match block {
            0 => level,
            1 => level + 1,
            2 => level - 1,
            _ => level,
        };
        0.5 * l[j].powi(p)
    })
}

/// Row offset of the observed block: `v2` for velocity observation, `u2` otherwise.
fn observed_offset(obs: &Observer, n: usize) -> usize {
    if obs.reads_velocity() {
        3 * n
    } else {
        n
    }
}

fn guard(space: &Space) -> Result<(), ObservabilityError> {
    if space.n_modes() > MAX_DENSE_MODES {
        return Err(ObservabilityError::TooLarge { n: space.n_modes(), max: MAX_DENSE_MODES });
    }
    Ok(())
}

/// `int_0^T |B* U2|^2 dt` along the trajectory from `u0` (Simpson in time).
pub fn gramian_form(
    space: &Space,
    u0: &CascadeState,
    coupling: &CouplingOperator,
    obs: &Observer,
    grid: &TimeGrid,
) -> Result<f64, ObservabilityError> {
    let tr = evolve_cascade(space, u0, coupling, grid)?;
    Ok(tr.integrate(|s| obs.norm_sq(&s.component2())))
}

/// Time-integrated quadratic forms of the cascade on initial data.
#[derive(Debug, Clone)]
pub struct GramianMatrices {
    /// `int |B* U2|^2`.
    pub observation: DMatrix<f64>,
    /// `int e_1(U2)`.
    pub energy_u2: DMatrix<f64>,
    /// `int <C u1, u1>`.
    pub coupling_u1: DMatrix<f64>,
    /// `int |C u1|^2`.
    pub forcing_u1: DMatrix<f64>,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Dense Gramian of the observation (4N x 4N, order `u1, u2, v1, v2`).
pub fn gramian_matrix(
    space: &Space,
    coupling: &CouplingOperator,
    obs: &Observer,
    grid: &TimeGrid,
) -> Result<DMatrix<f64>, ObservabilityError> {
    Ok(accumulate(space, coupling, obs, grid, false)?.observation)
}

/// Dense Gramian together with the energy and coupling integrals.
pub fn gramian_matrices(
    space: &Space,
    coupling: &CouplingOperator,
    obs: &Observer,
    grid: &TimeGrid,
) -> Result<GramianMatrices, ObservabilityError> {
    accumulate(space, coupling, obs, grid, true)
}

fn accumulate(
    space: &Space,
    coupling: &CouplingOperator,
    obs: &Observer,
    grid: &TimeGrid,
    extras: bool,
) -> Result<GramianMatrices, ObservabilityError> {
    guard(space)?;
    let n = space.n_modes();
    let dim = 4 * n;
    let w = grid.simpson_weights();
    let q = obs.gram();
    let off = observed_offset(obs, n);
    let lam = DVector::from_column_slice(space.eigenvalues());
    let mut g = DMatrix::zeros(dim, dim);
    let (mut e, mut f, mut fc) = if extras {
        (DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim))
    } else {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    };
    evolve_batch(space, &DMatrix::identity(dim, dim), coupling, grid, |k, x| {
        let y = x.rows(off, n);
        let qy = q * y;
        g.gemm_tr(w[k], &y, &qy, 1.0);
        if extras {
            let u2 = x.rows(n, n);
            let v2 = x.rows(3 * n, n);
            let mut lu2 = u2.into_owned();
            for (i, mut row) in lu2.row_iter_mut().enumerate() {
                row *= lam[i];
            }
            e.gemm_tr(0.5 * w[k], &u2, &lu2, 1.0);
            e.gemm_tr(0.5 * w[k], &v2, &v2, 1.0);
            let u1 = x.rows(0, n);
            let cu1 = &coupling.matrix * u1;
            f.gemm_tr(w[k], &u1, &cu1, 1.0);
            fc.gemm_tr(w[k], &cu1, &cu1, 1.0);
        }
    })?;
    symmetrize(&mut g);
    if extras {
        symmetrize(&mut e);
        symmetrize(&mut f);
        symmetrize(&mut fc);
    }
    Ok(GramianMatrices { observation: g, energy_u2: e, coupling_u1: f, forcing_u1: fc })
}

/// Upper triangular `R` with `R^T R` equal to the Gramian, built by streaming QR.
///
/// Unlike the accumulated Gramian, the singular values of `R` resolve
/// eigenvalues far below machine precision relative to the largest one,
/// which matters near or below the observability time.
pub fn gramian_factor(
    space: &Space,
    coupling: &CouplingOperator,
    obs: &Observer,
    grid: &TimeGrid,
) -> Result<DMatrix<f64>, ObservabilityError> {
    guard(space)?;
    let n = space.n_modes();
    let dim = 4 * n;
    let w = grid.simpson_weights();
    let off = observed_offset(obs, n);
    // exact root diag(sqrt(w)) O of the pointwise Gram matrix; an eigen-root
    // would clip its rapidly decaying spectrum at rounding level
    let mut root = obs.operator().clone();
    for (i, mut row) in root.row_iter_mut().enumerate() {
        row *= obs.channel_weights()[i].sqrt();
    }
    let ch = root.nrows();
    let mut r = DMatrix::<f64>::zeros(0, dim);
    evolve_batch(space, &DMatrix::identity(dim, dim), coupling, grid, |k, x| {
        let block = (&root * x.rows(off, n)) * w[k].sqrt();
        let mut stacked = DMatrix::zeros(r.nrows() + ch, dim);
        stacked.rows_mut(0, r.nrows()).copy_from(&r);
        stacked.rows_mut(r.nrows(), ch).copy_from(&block);
        r = stacked.qr().r();
    })?;
    Ok(r)
}

/// Matrix-free Gramian action `x -> G x` (one forward and one transposed sweep).
pub fn apply_gramian(
    space: &Space,
    coupling: &CouplingOperator,
    obs: &Observer,
    grid: &TimeGrid,
    x: &DVector<f64>,
) -> Result<DVector<f64>, ObservabilityError> {
    grid.check(space)?;
    let n = space.n_modes();
    let off = observed_offset(obs, n);
    let w = grid.simpson_weights();
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    evolve_batch(space, &DMatrix::from_column_slice(4 * n, 1, x.as_slice()), coupling, grid, |_, s| {
        states.push(s.rows(off, n).into_owned())
    })?;
    let kernel = StepKernel::new(space, &coupling.matrix, grid.dt());
    let mut z = DMatrix::zeros(4 * n, 1);
    for k in (0..=grid.n_steps()).rev() {
        if k < grid.n_steps() {
            kernel.step_transpose(&mut z, Driver::First);
        }
        let qy = obs.gram() * &states[k];
        let mut rows = z.rows_mut(off, n);
        rows += qy * w[k];
    }
    Ok(DVector::from_column_slice(z.as_slice()))
}

/// How the extreme eigenvalues are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigenMethod {
    /// Symmetric eigensolver on the accumulated Gramian.
    Dense,
    /// Singular values of the streaming QR factor.
    Factored,
    /// Matrix-free Lanczos.
    Lanczos { max_iter: usize, tol: f64 },
}

#[derive(Debug, Clone)]
pub struct EigenResult {
    pub min: f64,
    pub max: f64,
    /// Minimizing direction in the energy-normalized coordinates.
    pub vector: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Smallest eigenvalue the method can distinguish from zero.
    pub floor: f64,
}

impl EigenResult {
    /// True when `min` lies above the rounding floor of the method.
    pub fn resolved(&self) -> bool {
        self.min > self.floor
    }
}

/// Extreme eigenvalues of the energy-normalized Gramian `D^{-1/2} G D^{-1/2}`.
pub fn min_eigenvalue(
    space: &Space,
    coupling: &CouplingOperator,
    obs: &Observer,
    grid: &TimeGrid,
    level: i32,
    method: EigenMethod,
) -> Result<EigenResult, ObservabilityError> {
    let d = norm_weights(space, level).map(|v| 1.0 / v.sqrt());
    match method {
        EigenMethod::Dense => {
            let s = scale(&gramian_matrix(space, coupling, obs, grid)?, &d);
            let mut out = extremes(&s);
            out.floor = s.nrows() as f64 * f64::EPSILON * out.max;
            Ok(out)
        }
        EigenMethod::Factored => {
            let mut r = gramian_factor(space, coupling, obs, grid)?;
            for (j, mut col) in r.column_iter_mut().enumerate() {
                col *= d[j];
            }
            let svd = r.svd(false, true);
            let vt = svd.v_t.expect("requested right singular vectors");
            let (mut imin, mut imax) = (0, 0);
            for i in 0..svd.singular_values.len() {
                if svd.singular_values[i] < svd.singular_values[imin] {
                    imin = i;
                }
                if svd.singular_values[i] > svd.singular_values[imax] {
                    imax = i;
                }
            }
            let rank_deficient = svd.singular_values.len() < d.len();
            let min = if rank_deficient { 0.0 } else { svd.singular_values[imin].powi(2) };
            let max = svd.singular_values[imax].powi(2);
            Ok(EigenResult {
                min,
                max,
                vector: vt.row(imin).transpose(),
                iterations: 0,
                converged: true,
                floor: (d.len() as f64 * f64::EPSILON).powi(2) * max,
            })
        }
        EigenMethod::Lanczos { max_iter, tol } => {
            let dim = d.len();
            let start = DVector::from_fn(dim, |i, _| 1.0 + 0.37 * ((i * 7919) % 101) as f64 / 101.0);
            let mut failure = None;
            let out = lanczos_extremes(
                |x| match apply_gramian(space, coupling, obs, grid, &x.component_mul(&d)) {
                    Ok(y) => y.component_mul(&d),
                    Err(e) => {
                        failure = Some(e);
                        DVector::zeros(dim)
                    }
                },
                &start,
                max_iter,
                tol,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            Ok(EigenResult {
                min: out.min,
                max: out.max,
                vector: out.min_vector,
                iterations: out.iterations,
                converged: out.converged,
                floor: (dim as f64 * f64::EPSILON).max(tol * tol) * out.max,
            })
        }
    }
}

fn scale(g: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| d[i] * g[(i, j)] * d[j])
}

fn extremes(s: &DMatrix<f64>) -> EigenResult {
    let eig = s.clone().symmetric_eigen();
    let imin = eig.eigenvalues.imin();
    EigenResult {
        min: eig.eigenvalues[imin],
        max: eig.eigenvalues.max(),
        vector: eig.eigenvectors.column(imin).into_owned(),
        iterations: 0,
        converged: true,
        floor: 0.0,
    }
}

fn block(s: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| s[(idx[i], idx[j])])
}

fn component_indices(n: usize, second: bool) -> Vec<usize> {
    let (a, b) = if second { (n, 3 * n) } else { (0, 2 * n) };
    (a..a + n).chain(b..b + n).collect()
}

/// Extreme eigenvalues of a symmetric block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum {
    pub min: f64,
    pub max: f64,
}

fn spectrum(m: &DMatrix<f64>) -> Spectrum {
    let e = m.clone().symmetric_eigen().eigenvalues;
    Spectrum { min: e.min(), max: e.max() }
}

/// Spectral summary of the normalized Gramian at one horizon and truncation.
#[derive(Debug, Clone)]
pub struct GramianReport {
    pub horizon: f64,
    pub n_modes: usize,
    pub full: Spectrum,
    pub u1_block: Spectrum,
    pub u2_block: Spectrum,
    /// Best constant in `e_0(U1)(0) <= d1 int |B* U2|^2`.
    pub d1: f64,
    /// Best constant in `e_1(U2)(0) <= d2 int |B* U2|^2`.
    pub d2: f64,
    /// Best constant in `int e_1(U2) <= k2 int |B* U2|^2`.
    pub k2: f64,
    /// Best constant in `int <C u1, u1> <= r2 int |B* U2|^2`.
    pub r2: f64,
    /// Best constant in `int |B* U2|^2 <= K (e_0(U1)(0) + e_1(U2)(0))`.
    pub admissibility: f64,
    /// `(N, min eigenvalue)` pairs, filled by [`refinement_table`].
    pub refinement: Vec<(usize, f64)>,
    /// Full normalized spectrum, ascending.
    pub spectrum: DVector<f64>,
}

impl GramianReport {
    /// Rounding floor of the dense eigensolver.
    pub fn floor(&self) -> f64 {
        self.spectrum.len() as f64 * f64::EPSILON * self.full.max
    }

    /// Number of eigenvalues the dense solver cannot separate from zero.
    pub fn below_floor(&self) -> usize {
        let f = self.floor();
        self.spectrum.iter().filter(|v| **v <= f).count()
    }
}

/// Dense spectral report at level 0.
pub fn gramian_report(
    space: &Space,
    coupling: &CouplingOperator,
    obs: &Observer,
    grid: &TimeGrid,
) -> Result<GramianReport, ObservabilityError> {
    let n = space.n_modes();
    let mats = gramian_matrices(space, coupling, obs, grid)?;
    let d = norm_weights(space, 0).map(|v| 1.0 / v.sqrt());
    let s = scale(&mats.observation, &d);
    let eig = s.clone().symmetric_eigen();
    let full = Spectrum { min: eig.eigenvalues.min(), max: eig.eigenvalues.max() };
    let i1 = component_indices(n, false);
    let i2 = component_indices(n, true);
    let (d1, d2, k2, r2) = if full.min > 0.0 {
        let mut inv = eig.eigenvectors.clone();
        let mut inv_half = eig.eigenvectors.clone();
        for (j, mut col) in inv.column_iter_mut().enumerate() {
            col *= 1.0 / eig.eigenvalues[j];
        }
        for (j, mut col) in inv_half.column_iter_mut().enumerate() {
            col *= 1.0 / eig.eigenvalues[j].sqrt();
        }
        let s_inv = &inv * eig.eigenvectors.transpose();
        let s_inv_half = &inv_half * eig.eigenvectors.transpose();
        let rel = |m: &DMatrix<f64>| spectrum(&(&s_inv_half * scale(m, &d) * &s_inv_half)).max;
        (
            spectrum(&block(&s_inv, &i1)).max,
            spectrum(&block(&s_inv, &i2)).max,
            rel(&mats.energy_u2),
            rel(&mats.coupling_u1),
        )
    } else {
        (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY)
    };
    Ok(GramianReport {
        horizon: grid.horizon(),
        n_modes: n,
        full,
        u1_block: spectrum(&block(&s, &i1)),
        u2_block: spectrum(&block(&s, &i2)),
        d1,
        d2,
        k2,
        r2,
        admissibility: full.max,
        refinement: Vec::new(),
        spectrum: {
            let mut v: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
            v.sort_by(f64::total_cmp);
            DVector::from_vec(v)
        },
    })
}

/// Minimum normalized eigenvalue at each truncation in `ns`.
pub fn refinement_table(
    geometry: &Geometry,
    ns: &[usize],
    horizon: f64,
    dt_omega: f64,
    level: i32,
    method: EigenMethod,
) -> Result<Vec<(usize, EigenResult)>, ObservabilityError> {
    ns.iter()
        .map(|&n| {
            let space = Space::new(n).map_err(DynamicsError::from)?;
            let (c, obs) = geometry.build(&space)?;
            let grid = TimeGrid::resolved(horizon, &space, dt_omega)?;
            Ok((n, min_eigenvalue(&space, &c, &obs, &grid, level, method)?))
        })
        .collect()
}

/// First horizon in `scan` whose minimum eigenvalue exceeds `floor * max` at
/// truncation `n` and keeps at least half its value at `2n`.
pub fn empirical_horizon(
    geometry: &Geometry,
    n: usize,
    scan: &[f64],
    dt_omega: f64,
    floor: f64,
) -> Result<Option<f64>, ObservabilityError> {
    for &t in scan {
        let tab = refinement_table(geometry, &[n, 2 * n], t, dt_omega, 0, EigenMethod::Dense)?;
        let (a, b) = (&tab[0].1, &tab[1].1);
        if a.min > floor * a.max && b.min >= 0.5 * a.min {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Largest observation-to-energy ratio over an ensemble of initial data.
pub fn admissibility_constant(
    space: &Space,
    coupling: &CouplingOperator,
    obs: &Observer,
    grid: &TimeGrid,
    ensemble: &[CascadeState],
) -> Result<f64, ObservabilityError> {
    let mut best: f64 = 0.0;
    for u in ensemble {
        let e = energy(space, &u.component1(), 0) + energy(space, &u.component2(), 1);
        if e > 0.0 {
            best = best.max(gramian_form(space, u, coupling, obs, grid)? / e);
        }
    }
    Ok(best)
}

/// Minimal time for the one-dimensional geometric control condition.
///
/// Rays travel at unit speed and reflect at the endpoints. An interior
/// interval `(a, b)` is reached by every ray within `2 max(a, 1 - b)`; one
/// endpoint within 2; both endpoints within 1.
pub fn gcc_min_time(region: Region) -> Result<f64, ObservabilityError> {
    match region {
        Region::Interval(a, b) => {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a >= b {
                return Err(ObservabilityError::EmptyRegion);
            }
            Ok(2.0 * a.max(1.0 - b))
        }
        Region::Boundary { left, right } => match (left, right) {
            (false, false) => Err(ObservabilityError::EmptyRegion),
            (true, true) => Ok(1.0),
            _ => Ok(2.0),
        },
    }
}

/// Constants of the two-level energy argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityConstants {
    pub alpha: f64,
    pub beta: f64,
    pub gamma0: f64,
    pub eta0: f64,
    pub alpha0: f64,
    pub c: [f64; 4],
    pub a: f64,
    pub b: f64,
    pub nu: f64,
    pub m: f64,
    pub t0: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

/// Default proof constants `c1..c4`.
pub const DEFAULT_C: [f64; 4] = [4.0, 16.0, 32.0, 128.0];

/// Inputs of [`theoretical_constants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantInputs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma0: f64,
    pub eta0: f64,
    pub alpha0: f64,
    pub t0: f64,
    pub c: [f64; 4],
}

pub fn theoretical_constants(inp: ConstantInputs) -> Result<ObservabilityConstants, ObservabilityError> {
    let vals = [inp.alpha, inp.beta, inp.gamma0, inp.eta0, inp.alpha0, inp.c[0], inp.c[1], inp.c[2], inp.c[3]];
    if vals.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !(inp.t0 >= 0.0) {
        return Err(ObservabilityError::Invalid("constants must be positive and finite".into()));
    }
    let ConstantInputs { alpha, beta, gamma0, eta0, alpha0, t0, c } = inp;
    let a = c[2] * beta * gamma0 / (2.0 * alpha);
    let b = c[3] * beta * beta * gamma0 * gamma0 / (2.0 * alpha * alpha);
    let s = (a * a + a + b).sqrt();
    let nu = a + s;
    let m = s / ((2.0 * a + 1.0) * (a + s) + a + 2.0 * b);
    let t1 = (2.0 * c[3] * alpha0 * beta * gamma0).sqrt() / alpha;
    let t2 = (2.0 * c[2] * alpha0 * beta * gamma0).sqrt() / (alpha * m).sqrt();
    Ok(ObservabilityConstants { alpha, beta, gamma0, eta0, alpha0, c, a, b, nu, m, t0, t1, t2, t3: t0.max(t1).max(t2) })
}

impl ObservabilityConstants {
    fn gap(&self, t: f64) -> Option<f64> {
        let g = t * t - self.t2 * self.t2;
        (g > 0.0).then_some(g)
    }

    /// Theoretical `d1(T)`, defined for `T > T2`.
    pub fn d1(&self, t: f64) -> Option<f64> {
        let (al, be, g0) = (self.alpha, self.beta, self.gamma0);
        self.gap(t).map(|g| {
            2.0 * self.eta0 * g0 * g0 / (al * al * g * t) * (self.c[2] / self.m + self.c[3] * be * g0 / al)
        })
    }

    /// Theoretical `d2(T)`, defined for `T > T2`.
    pub fn d2(&self, t: f64) -> Option<f64> {
        self.gap(t).map(|g| 2.0 * t * self.eta0 / (self.m * g))
    }

    /// Theoretical `k2(T)`, defined for `T > T2`.
    pub fn k2(&self, t: f64) -> Option<f64> {
        self.gap(t).map(|g| 2.0 * self.eta0 * t * t / g)
    }

    /// Theoretical `r2(T)`, defined for `T > T2`.
    pub fn r2(&self, t: f64) -> Option<f64> {
        let (al, be, g0) = (self.alpha, self.beta, self.gamma0);
        let d2 = self.d2(t)?;
        let g = self.gap(t)?;
        Some(self.c[2] * g0 / (al * t) * d2 + 2.0 * self.c[3] * self.eta0 * be * g0 * g0 / (al * al * g))
    }
}

/// Exact discrete values of the uniform observability constants at one horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Sup of `T e_1(V)(0) / int <Pi v', v'>` over free waves.
    pub gamma0: f64,
    /// Sup of `T e_1(P)(0) / int |B* P|^2` over free waves.
    pub eta0_free: f64,
    /// Inflated value `2 eta0_free`, so that `alpha0` below is finite.
    pub eta0: f64,
    /// Smallest `alpha0` with `int e_1(U2) - eta0 int |B* U2|^2 <= alpha0 int |C u1|^2` on cascade data.
    pub alpha0: f64,
}

/// Free-wave quadratic forms on `(u, v)` data: `(int <P v', v'>, int |B* v|^2)`.
fn free_wave_forms(
    space: &Space,
    projector: &DMatrix<f64>,
    obs: &Observer,
    grid: &TimeGrid,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ObservabilityError> {
    let n = space.n_modes();
    let zero = CouplingOperator::zero(space, (0.0, 1.0))?;
    let mut x0 = DMatrix::zeros(4 * n, 2 * n);
    for i in 0..n {
        x0[(i, i)] = 1.0;
        x0[(2 * n + i, n + i)] = 1.0;
    }
    let w = grid.simpson_weights();
    let (mut p, mut g) = (DMatrix::zeros(2 * n, 2 * n), DMatrix::zeros(2 * n, 2 * n));
    let off = if obs.reads_velocity() { 2 * n } else { 0 };
    evolve_batch(space, &x0, &zero, grid, |k, x| {
        let v = x.rows(2 * n, n);
        p.gemm_tr(w[k], &v, &(projector * v), 1.0);
        let y = x.rows(off, n);
        g.gemm_tr(w[k], &y, &(obs.gram() * y), 1.0);
    })?;
    symmetrize(&mut p);
    symmetrize(&mut g);
    Ok((p, g))
}

/// `sup x^T A x / x^T B x` for `B` positive definite.
fn max_generalized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    let chol = b.clone().cholesky()?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let m = &linv * a * linv.transpose();
    Some(spectrum(&(0.5 * (&m + m.transpose()))).max)
}

pub fn calibrate(
    space: &Space,
    coupling: &CouplingOperator,
    obs: &Observer,
    grid: &TimeGrid,
) -> Result<Calibration, ObservabilityError> {
    guard(space)?;
    let n = space.n_modes();
    let t = grid.horizon();
    let lam = space.eigenvalues();
    let e1 = DMatrix::from_diagonal(&DVector::from_fn(2 * n, |i, _| if i < n { 0.5 * lam[i] } else { 0.5 }));
    let (p, g) = free_wave_forms(space, &coupling.projector, obs, grid)?;
    let gamma0 = max_generalized(&(&e1 * t), &p)
        .ok_or_else(|| ObservabilityError::Unobservable("core region does not observe free waves".into()))?;
    let eta0_free = max_generalized(&(&e1 * t), &g)
        .ok_or_else(|| ObservabilityError::Unobservable("observer does not observe free waves".into()))?;
    let eta0 = 2.0 * eta0_free;
    let mats = gramian_matrices(space, coupling, obs, grid)?;
    let excess = &mats.energy_u2 - &mats.observation * eta0;
    let (i1, i2) = (component_indices(n, false), component_indices(n, true));
    let nyy = block(&excess, &i1);
    let nzz = block(&excess, &i2);
    let nyz = DMatrix::from_fn(2 * n, 2 * n, |i, j| excess[(i1[i], i2[j])]);
    let neg = (-&nzz).cholesky().ok_or_else(|| ObservabilityError::Invalid("inflated eta0 not dominant".into()))?;
    let schur = &nyy + &nyz * neg.solve(&nyz.transpose());
    let fyy = block(&mats.forcing_u1, &i1);
    let alpha0 = if coupling.is_zero() {
        0.0
    } else {
        max_generalized(&schur, &fyy)
            .ok_or_else(|| ObservabilityError::Invalid("coupling forcing degenerate".into()))?
            .max(0.0)
    };
    Ok(Calibration { gamma0, eta0_free, eta0, alpha0 })
}

/// What the uniform estimate observes.
#[derive(Debug, Clone, Copy)]
pub enum Probe<'a> {
    Observer(&'a Observer),
    /// Localization `<Pi p', p'>`.
    Projector(&'a DMatrix<f64>),
}

/// Initial datum and forcing `f(t) = a cos(k t) + b sin(k t)` of a forced wave.
#[derive(Debug, Clone)]
pub struct ForcedSample {
    pub initial: ComponentState,
    pub cos_part: DVector<f64>,
    pub sin_part: DVector<f64>,
    pub frequency: f64,
}

/// Heuristic ensemble estimates; lower bounds on admissible constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformEstimate {
    /// `eta0` (observer) or `gamma0` (projector).
    pub observation: f64,
    /// `alpha0` (observer) or `delta0` (projector).
    pub source: f64,
}

pub fn estimate_uniform_constants(
    space: &Space,
    probe: Probe<'_>,
    grid: &TimeGrid,
    free: &[ComponentState],
    forced: &[ForcedSample],
) -> Result<UniformEstimate, ObservabilityError> {
    let w = grid.simpson_weights();
    let seen = |s: &ComponentState| match probe {
        Probe::Observer(o) => o.norm_sq(s),
        Probe::Projector(p) => s.v.dot(&(p * &s.v)),
    };
    let run = |p0: &ComponentState, f: Option<&ForcedSample>| -> Result<(f64, f64, f64), ObservabilityError> {
        let force = |t: f64| match f {
            Some(s) => &s.cos_part * (s.frequency * t).cos() + &s.sin_part * (s.frequency * t).sin(),
            None => DVector::zeros(space.n_modes()),
        };
        let states = match f {
            Some(_) => evolve_forced_wave(space, p0, force, grid)?,
            None => grid.times().iter().map(|&t| free_evolve(space, p0, t)).collect(),
        };
        let (mut e, mut o, mut ff) = (0.0, 0.0, 0.0);
        for (k, s) in states.iter().enumerate() {
            e += w[k] * energy(space, s, 1);
            o += w[k] * seen(s);
            ff += w[k] * force(grid.time(k)).norm_squared();
        }
        Ok((e, o, ff))
    };
    let mut obs_const: f64 = 0.0;
    let mut any = false;
    for p0 in free {
        let (e, o, _) = run(p0, None)?;
        if e > 0.0 {
            if o <= 1e-300 {
                return Err(ObservabilityError::Unobservable("a free wave produced no observation".into()));
            }
            obs_const = obs_const.max(e / o);
            any = true;
        }
    }
    if !any {
        return Err(ObservabilityError::Unobservable("empty or trivial free ensemble".into()));
    }
    let mut src: f64 = 0.0;
    for s in forced {
        let (e, o, ff) = run(&s.initial, Some(s))?;
        if ff > 0.0 {
            src = src.max((e - obs_const * o).max(0.0) / ff);
        }
    }
    Ok(UniformEstimate { observation: obs_const, source: src })
}

/// One normalized inequality `lhs <= rhs` of the audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: f64,
    pub must_hold: bool,
}

impl AuditEntry {
    fn new(name: &'static str, lhs: f64, rhs: f64, must_hold: bool) -> Self {
        Self { name, lhs, rhs, margin: rhs - lhs, must_hold }
    }

    /// True when the inequality holds up to rounding.
    pub fn satisfied(&self) -> bool {
        self.margin >= -1e-9 * (self.lhs.abs() + self.rhs.abs())
    }
}

/// Evaluates every inequality of the two-level energy argument along the trajectory from `u0`.
///
/// Entries valid beyond `T0` are flagged `must_hold` when `T > T0`; the ones
/// that need `T > T3` only when `T > T3`. The remaining ones report margins.
pub fn proof_chain_audit(
    space: &Space,
    u0: &CascadeState,
    coupling: &CouplingOperator,
    obs: &Observer,
    k: &ObservabilityConstants,
    grid: &TimeGrid,
) -> Result<Vec<AuditEntry>, ObservabilityError> {
    let tr = evolve_cascade(space, u0, coupling, grid)?;
    let t = grid.horizon();
    let end = tr.final_state();
    let cint = tr.integrate(|s| coupling.apply(&s.u1).dot(&s.u1));
    let pint = tr.integrate(|s| s.u1.dot(&(&coupling.projector * &s.u1)));
    let ie1 = tr.integrate(|s| energy(space, &s.component2(), 1));
    let oint = tr.integrate(|s| obs.norm_sq(&s.component2()));
    let bracket = |s: &CascadeState| s.v1.dot(&s.u2) - s.v2.dot(&s.u1);
    let duality = bracket(end) - bracket(u0);
    let e0u1 = energy(space, &u0.component1(), 0);
    let e10 = energy(space, &u0.component2(), 1);
    let e1t = energy(space, &end.component2(), 1);
    let ends = e10 + e1t;
    let (al, be, g0, e0, a0) = (k.alpha, k.beta, k.gamma0, k.eta0, k.alpha0);
    let [c1, c2, c3, c4] = k.c;
    let late = t > k.t0;
    let past = t > k.t3;
    let eta = t * al / (4.0 * g0);
    let gap = t * t - k.t2 * k.t2;
    Ok(vec![
        AuditEntry::new("coupling_duality_identity", (cint - duality).abs(), 1e-6 * (cint.abs() + duality.abs()), true),
        AuditEntry::new("coupling_young_bound", cint, 2.0 * eta * e0u1 + ends / eta, true),
        AuditEntry::new("free_wave_localized_observability", t * e0u1, g0 * pint, late),
        AuditEntry::new("weakened_energy_from_coupling", e0u1, g0 / (al * t) * cint, late),
        AuditEntry::new("weakened_energy_endpoint_bound", e0u1, 8.0 * g0 * g0 / (al * al * t * t) * ends, late),
        AuditEntry::new("coupling_endpoint_bound", cint, 8.0 * g0 / (al * t) * ends, late),
        AuditEntry::new("endpoint_energy_bound", ends, c1 * e10 + c2 * be * g0 / (al * t) * ie1, late),
        AuditEntry::new(
            "coupling_integral_bound",
            cint,
            c3 * g0 / (al * t) * e10 + c4 * be * g0 * g0 / (al * al * t * t) * ie1,
            late,
        ),
        AuditEntry::new("energy_integral_lower_bound", k.m * t * e10, ie1, late),
        AuditEntry::new("uniform_observation_with_source", ie1 - a0 * be * cint, e0 * oint, late),
        AuditEntry::new("observation_lower_bound", k.m / (2.0 * t) * gap * e10, e0 * oint, past),
        AuditEntry::new("energy_integral_upper_bound", ie1 * gap, 2.0 * e0 * t * t * oint, past),
        AuditEntry::new(
            "coupling_observation_bound",
            cint * gap,
            c3 * g0 / (al * t) * e10 * gap + 2.0 * c4 * e0 * be * g0 * g0 / (al * al) * oint,
            past,
        ),
        AuditEntry::new(
            "weakened_energy_observation_bound",
            e0u1 * gap * t,
            2.0 * e0 * g0 * g0 / (al * al) * (c3 / k.m + c4 * be * g0 / al) * oint,
            past,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_chain_reference_values() {
        let k = theoretical_constants(ConstantInputs {
            alpha: 1.0,
            beta: 1.0,
            gamma0: 1.0,
            eta0: 1.0,
            alpha0: 1.0,
            t0: 1.0,
            c: DEFAULT_C,
        })
        .unwrap();
        assert_eq!(k.a, 16.0);
        assert_eq!(k.b, 64.0);
        assert!((k.nu - (16.0 + 336f64.sqrt())).abs() < 1e-12);
        assert!((k.t1 - 16.0).abs() < 1e-12);
        assert!((k.t2 - 8.0 / k.m.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gcc_times() {
        assert!((gcc_min_time(Region::Interval(0.6, 0.7)).unwrap() - 1.2).abs() < 1e-15);
        assert_eq!(gcc_min_time(Region::Interval(0.0, 1.0)).unwrap(), 0.0);
        assert_eq!(gcc_min_time(Region::Boundary { left: true, right: false }).unwrap(), 2.0);
        assert!(gcc_min_time(Region::Boundary { left: false, right: false }).is_err());
        assert!(gcc_min_time(Region::Interval(0.5, 0.5)).is_err());
    }
}
