//! Exact controllability of the controlled cascade
//!
//! ```text
//! y1'' + A y1 + C y2 = 0
//! y2'' + A y2        = B v + xi
//! ```
//!
//! by the Hilbert Uniqueness Method. The adjoint is the uncontrolled cascade
//! solved backward from `W^T`; the control is `v = B* w2`. Writing the
//! symplectic pairing `[Y, W] = <y', w> - <y, w'>` summed over components,
//! the controlled solution satisfies
//!
//! ```text
//! [Y(T), W^T] - [Y0, W(0)] = int_0^T <B v + xi, w2> dt
//! ```
//!
//! for every adjoint solution. Nulling `Y(T)` is thus the variational problem
//! `Lambda(W^T, .) = -L(.)`, solved by conjugate gradients in the Riesz metric
//! of the adjoint space, which is diagonal in the modal basis.
//!
//! Two cases: interior control (`B* w2 = b w2`, adjoint data in
//! `H_{-1} x H x H_{-2} x H_{-1}`) and boundary control (`B* w2 = b_e dw2/dnu`,
//! adjoint data in `H x H_1 x H_{-1} x H`). Boundary controls enter the
//! modal equations through the lifting `(B v)_j = sum_e v_e b_e dphi_j/dnu(e)`,
//! which is what the transposition identity prescribes.

use crate::dynamics::{
    evolve_cascade, evolve_cascade_backward, evolve_controlled, CascadeState, ControlledTrajectory, CouplingOperator,
    DynamicsError, Observer, ObserverKind, TimeGrid,
};
use crate::linalg::{conjugate_gradient, lanczos_extremes};
use crate::sampling;
use crate::Space;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HumError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("observability floor violated: min/max eigenvalue ratio {ratio:.3e} below {floor:.1e}")]
    Floor { ratio: f64, floor: f64 },
    #[error("conjugate gradients stalled after {iterations} iterations at relative residual {residual:.3e}")]
    Stagnation { iterations: usize, residual: f64, history: Vec<f64> },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlCase {
    /// Distributed control `b v` with `v` in `L^2(0,T; L^2)`.
    Interior,
    /// Dirichlet control at the weighted endpoints.
    Boundary,
}

impl ControlCase {
    /// Riesz weights of the adjoint space on `(w1, w2, w1', w2')` as powers of `lambda`.
    fn adjoint_powers(self) -> [i32; 4] {
        match self {
            ControlCase::Interior => [-1, 0, -2, -1],
            ControlCase::Boundary => [0, 1, -1, 0],
        }
    }

    /// Sobolev indices of the state space on `(y1, y2, y1', y2')`.
    pub fn state_powers(self) -> [i32; 4] {
        match self {
            ControlCase::Interior => [2, 1, 1, 0],
            ControlCase::Boundary => [1, 0, 0, -1],
        }
    }
}

/// A HUM control problem.
#[derive(Debug, Clone)]
pub struct HumProblem {
    pub case: ControlCase,
    pub y0: CascadeState,
    /// Modal source on the `y2` equation at each grid node; empty for none.
    pub source: Vec<DVector<f64>>,
    pub coupling: CouplingOperator,
    pub observer: Observer,
    pub grid: TimeGrid,
    pub cg_tolerance: f64,
    pub max_iterations: usize,
    /// Minimum accepted `min/max` eigenvalue ratio of the normalized Gramian.
    pub floor: f64,
    /// Skip the Lanczos floor certificate (the solve still reports stagnation).
    pub skip_floor_check: bool,
}

impl HumProblem {
    pub fn new(case: ControlCase, y0: CascadeState, coupling: CouplingOperator, observer: Observer, grid: TimeGrid) -> Self {
        Self {
            case,
            y0,
            source: Vec::new(),
            coupling,
            observer,
            grid,
            cg_tolerance: 1e-10,
            max_iterations: 1000,
            floor: 1e-8,
            skip_floor_check: false,
        }
    }

    pub fn with_source(mut self, source: Vec<DVector<f64>>) -> Self {
        self.source = source;
        self
    }

    fn validate(&self, space: &Space) -> Result<(), HumError> {
        let kind_ok = matches!(
            (self.case, self.observer.kind()),
            (ControlCase::Interior, ObserverKind::InteriorVelocity) | (ControlCase::Boundary, ObserverKind::BoundaryNormalDerivative)
        );
        if !kind_ok {
            return Err(HumError::Invalid("control case does not match the observer kind".into()));
        }
        if !(self.cg_tolerance > 0.0) {
            return Err(HumError::Invalid("cg tolerance must be positive".into()));
        }
        if self.y0.n_modes() != space.n_modes() {
            return Err(HumError::Invalid("initial data dimension differs from the space".into()));
        }
        if !self.source.is_empty() && self.source.len() != self.grid.n_steps() + 1 {
            return Err(HumError::Invalid("source must have one sample per grid node".into()));
        }
        self.grid.check(space)?;
        Ok(())
    }

    /// Diagonal Riesz metric of the adjoint space.
    pub fn metric(&self, space: &Space) -> DVector<f64> {
        powers_diagonal(space, self.case.adjoint_powers())
    }
}

fn powers_diagonal(space: &Space, p: [i32; 4]) -> DVector<f64> {
    let n = space.n_modes();
    let l = space.eigenvalues();
    DVector::from_fn(4 * n, |i, _| l[i % n].powi(p[i / n]))
}

/// `[Y, W] = <y', w> - <y, w'>` over both components.
pub fn pairing(y: &CascadeState, w: &CascadeState) -> f64 {
    y.v1.dot(&w.u1) + y.v2.dot(&w.u2) - y.u1.dot(&w.v1) - y.u2.dot(&w.v2)
}

/// Representative `J^T Y = (y', -y)` with `[Y, W] = (J^T Y) . W`.
fn pairing_representative(y: &CascadeState) -> DVector<f64> {
    CascadeState::new(y.v1.clone(), y.v2.clone(), -&y.u1, -&y.u2).to_vector()
}

/// Control samples `B* w2` at the grid nodes along the adjoint trajectory from `wt`.
pub fn extract_control(space: &Space, wt: &CascadeState, problem: &HumProblem) -> Result<Vec<DVector<f64>>, HumError> {
    let adj = evolve_cascade_backward(space, wt, &problem.coupling, &problem.grid)?;
    Ok(adj.states.iter().map(|s| problem.observer.read(&s.u2)).collect())
}

fn forces(problem: &HumProblem, control: Option<&[DVector<f64>]>, with_source: bool) -> Vec<DVector<f64>> {
    let nodes = problem.grid.n_steps() + 1;
    let n = problem.coupling.n_modes();
    if control.is_none() && (!with_source || problem.source.is_empty()) {
        return Vec::new();
    }
    (0..nodes)
        .map(|k| {
            let mut f = match control {
                Some(v) => problem.observer.control_to_force(&v[k]),
                None => DVector::zeros(n),
            };
            if with_source {
                if let Some(s) = problem.source.get(k) {
                    f += s;
                }
            }
            f
        })
        .collect()
}

/// Euclidean Gramian action `W^T -> G W^T` with `W~ . G W = int <B* w2, B* w~2>`.
fn gramian_euclidean(space: &Space, w: &DVector<f64>, problem: &HumProblem) -> Result<DVector<f64>, HumError> {
    let wt = CascadeState::from_vector(w);
    let v = extract_control(space, &wt, problem)?;
    let y = evolve_controlled(
        space,
        &CascadeState::zeros(space.n_modes()),
        &problem.coupling,
        &problem.grid,
        &forces(problem, Some(&v), false),
    )?;
    Ok(pairing_representative(y.final_state()))
}

/// Riesz representative in the adjoint space of `Lambda(W^T, .)`.
pub fn apply_hum_gramian(space: &Space, wt: &CascadeState, problem: &HumProblem) -> Result<CascadeState, HumError> {
    let g = gramian_euclidean(space, &wt.to_vector(), problem)?;
    Ok(CascadeState::from_vector(&g.component_div(&problem.metric(space))))
}

/// `Lambda(W, W~) = int <B* w2, B* w~2>` by direct time quadrature of two adjoint solves.
pub fn hum_bilinear(space: &Space, w: &CascadeState, wt: &CascadeState, problem: &HumProblem) -> Result<f64, HumError> {
    let a = extract_control(space, w, problem)?;
    let b = extract_control(space, wt, problem)?;
    let cw = problem.observer.channel_weights();
    let tw = problem.grid.simpson_weights();
    Ok(a.iter().zip(&b).zip(&tw).map(|((x, y), t)| t * x.component_mul(cw).dot(y)).sum())
}

/// Euclidean representative of `L + J` (the free controlled solution's final state, paired).
fn rhs_euclidean(space: &Space, problem: &HumProblem) -> Result<(DVector<f64>, ControlledTrajectory), HumError> {
    let y = evolve_controlled(space, &problem.y0, &problem.coupling, &problem.grid, &forces(problem, None, true))?;
    Ok((pairing_representative(y.final_state()), y))
}

/// Riesz representative in the adjoint space of `W~ -> [Y0, W~(0)] + int <xi, w~2>`.
pub fn assemble_rhs(space: &Space, problem: &HumProblem) -> Result<CascadeState, HumError> {
    let (l, _) = rhs_euclidean(space, problem)?;
    Ok(CascadeState::from_vector(&l.component_div(&problem.metric(space))))
}

/// `[Y0, W~(0)] + int <xi, w~2>` evaluated along the backward solution from `wt`.
pub fn linear_form_direct(space: &Space, wt: &CascadeState, problem: &HumProblem) -> Result<f64, HumError> {
    let adj = evolve_cascade_backward(space, wt, &problem.coupling, &problem.grid)?;
    let mut val = pairing(&problem.y0, &adj.states[0]);
    for (k, w) in problem.grid.simpson_weights().iter().enumerate() {
        if let Some(s) = problem.source.get(k) {
            val += w * s.dot(&adj.states[k].u2);
        }
    }
    Ok(val)
}

/// Component norms of a state in the case's state space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateNorms {
    pub y1: f64,
    pub y2: f64,
    pub y1_velocity: f64,
    pub y2_velocity: f64,
}

impl StateNorms {
    pub fn total(&self) -> f64 {
        (self.y1.powi(2) + self.y2.powi(2) + self.y1_velocity.powi(2) + self.y2_velocity.powi(2)).sqrt()
    }

    pub fn max(&self) -> f64 {
        self.y1.max(self.y2).max(self.y1_velocity).max(self.y2_velocity)
    }
}

pub fn state_norms(space: &Space, y: &CascadeState, case: ControlCase) -> StateNorms {
    let p = case.state_powers();
    let norm = |x: &DVector<f64>, k: i32| {
        x.iter().zip(space.eigenvalues()).map(|(c, l)| l.powi(k) * c * c).sum::<f64>().sqrt()
    };
    StateNorms { y1: norm(&y.u1, p[0]), y2: norm(&y.u2, p[1]), y1_velocity: norm(&y.v1, p[2]), y2_velocity: norm(&y.v2, p[3]) }
}

/// Result of a HUM solve.
#[derive(Debug, Clone)]
pub struct HumSolution {
    /// Final datum of the adjoint problem.
    pub wt: CascadeState,
    /// Control samples `B* w2` at the grid nodes (channels of the observer).
    pub control: Vec<DVector<f64>>,
    pub cg_iterations: usize,
    /// CG residual in the adjoint metric relative to the right hand side.
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
    pub initial_norms: StateNorms,
    pub terminal_norms: StateNorms,
    /// Controlled trajectory re-simulated with the extracted control.
    pub trajectory: ControlledTrajectory,
    /// `|Lambda(W, W) + L(W)| / Lambda(W, W)` at the solution.
    pub duality_residual: f64,
    /// Normalized Gramian extremes from the floor certificate (zero when skipped).
    pub gramian_min: f64,
    pub gramian_max: f64,
}

impl HumSolution {
    /// Largest terminal component norm relative to the total initial norm.
    pub fn relative_terminal(&self) -> f64 {
        let init = self.initial_norms.total();
        if init == 0.0 {
            self.terminal_norms.max()
        } else {
            self.terminal_norms.max() / init
        }
    }

    /// Discrete `L^2(0,T)` norm of the control.
    pub fn control_norm(&self, problem: &HumProblem) -> f64 {
        control_norm(&self.control, problem)
    }
}

pub fn control_norm(v: &[DVector<f64>], problem: &HumProblem) -> f64 {
    let cw = problem.observer.channel_weights();
    let tw = problem.grid.simpson_weights();
    v.iter().zip(&tw).map(|(x, t)| t * x.component_mul(cw).dot(x)).sum::<f64>().sqrt()
}

/// Extreme eigenvalues of the metric-normalized HUM Gramian by Lanczos.
pub fn hum_gramian_extremes(space: &Space, problem: &HumProblem, max_iter: usize, tol: f64) -> Result<(f64, f64, bool), HumError> {
    let m = problem.metric(space).map(|v| 1.0 / v.sqrt());
    let dim = m.len();
    let start = DVector::from_fn(dim, |i, _| 1.0 + 0.5 * ((i * 31) % 17) as f64 / 17.0);
    let mut failure = None;
    let out = lanczos_extremes(
        |x| match gramian_euclidean(space, &x.component_mul(&m), problem) {
            Ok(y) => y.component_mul(&m),
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
    Ok((out.min, out.max, out.converged))
}

/// Solves the HUM problem and certifies the terminal state.
pub fn solve_hum(space: &Space, problem: &HumProblem) -> Result<HumSolution, HumError> {
    problem.validate(space)?;
    let n = space.n_modes();
    let (mut gmin, mut gmax) = (0.0, 0.0);
    if !problem.skip_floor_check {
        let (lo, hi, _) = hum_gramian_extremes(space, problem, (4 * n).min(400), 1e-10)?;
        if !(hi > 0.0) || lo < problem.floor * hi {
            return Err(HumError::Floor { ratio: if hi > 0.0 { lo / hi } else { 0.0 }, floor: problem.floor });
        }
        gmin = lo;
        gmax = hi;
    }
    let metric = problem.metric(space);
    let (l, _) = rhs_euclidean(space, problem)?;
    let rhs = -l.component_div(&metric);
    let mut failure = None;
    let cg = conjugate_gradient(
        |x| match gramian_euclidean(space, x, problem) {
            Ok(y) => y.component_div(&metric),
            Err(e) => {
                failure = Some(e);
                DVector::zeros(x.len())
            }
        },
        &rhs,
        &metric,
        problem.cg_tolerance,
        problem.max_iterations,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    if !cg.converged {
        return Err(HumError::Stagnation { iterations: cg.iterations, residual: cg.relative_residual, history: cg.history });
    }
    let wt = CascadeState::from_vector(&cg.solution);
    let control = extract_control(space, &wt, problem)?;
    let trajectory =
        evolve_controlled(space, &problem.y0, &problem.coupling, &problem.grid, &forces(problem, Some(&control), true))?;
    let lam = control_norm(&control, problem).powi(2);
    let lin = linear_form_direct(space, &wt, problem)?;
    let duality_residual = if lam > 0.0 { (lam + lin).abs() / lam } else { lin.abs() };
    Ok(HumSolution {
        initial_norms: state_norms(space, &problem.y0, problem.case),
        terminal_norms: state_norms(space, trajectory.final_state(), problem.case),
        wt,
        control,
        cg_iterations: cg.iterations,
        final_residual: cg.relative_residual,
        residual_history: cg.history,
        trajectory,
        duality_residual,
        gramian_min: gmin,
        gramian_max: gmax,
    })
}

/// Dense Euclidean Gramian, one column per basis direction (small `N` only).
pub fn dense_hum_matrix(space: &Space, problem: &HumProblem) -> Result<DMatrix<f64>, HumError> {
    let dim = 4 * space.n_modes();
    if dim > 128 {
        return Err(HumError::Invalid("dense HUM assembly limited to 32 modes".into()));
    }
    let mut g = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        g.set_column(j, &gramian_euclidean(space, &e, problem)?);
    }
    Ok(g)
}

/// Adjoint final datum from a dense LU solve.
pub fn dense_hum_solve(space: &Space, problem: &HumProblem) -> Result<CascadeState, HumError> {
    let g = dense_hum_matrix(space, problem)?;
    let (l, _) = rhs_euclidean(space, problem)?;
    let x = g.lu().solve(&(-l)).ok_or_else(|| HumError::Invalid("singular dense Gramian".into()))?;
    Ok(CascadeState::from_vector(&x))
}

/// Residuals of the transposition identity against random adjoint data.
#[derive(Debug, Clone, PartialEq)]
pub struct TranspositionReport {
    pub residuals: Vec<f64>,
    pub max_relative: f64,
}

/// Checks `[Y(T), W~^T] - [Y0, W~(0)] = int <B v + xi, w~2>` for `samples` random `W~^T`.
pub fn verify_transposition(
    space: &Space,
    trajectory: &ControlledTrajectory,
    control: &[DVector<f64>],
    problem: &HumProblem,
    samples: usize,
    seed: u64,
) -> Result<TranspositionReport, HumError> {
    let mut rng = sampling::rng(seed);
    let w = problem.grid.simpson_weights();
    let n = space.n_modes();
    let mut residuals = Vec::with_capacity(samples);
    for _ in 0..samples {
        let wt = sampling::random_cascade(n, &mut rng);
        let adj = evolve_cascade_backward(space, &wt, &problem.coupling, &problem.grid)?;
        let lhs = pairing(trajectory.final_state(), &wt) - pairing(&problem.y0, &adj.states[0]);
        let (mut rhs, mut scale) = (0.0, 0.0);
        for (k, s) in adj.states.iter().enumerate() {
            let mut f = DVector::zeros(n);
            if let Some(v) = control.get(k) {
                f += problem.observer.control_to_force(v);
            }
            if let Some(x) = problem.source.get(k) {
                f += x;
            }
            let term = w[k] * f.dot(&s.u2);
            rhs += term;
            scale += term.abs();
        }
        let scale = scale.max(pairing(trajectory.final_state(), &wt).abs()).max(f64::MIN_POSITIVE);
        residuals.push((lhs - rhs).abs() / scale);
    }
    let max_relative = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(TranspositionReport { residuals, max_relative })
}

/// Transposition identity for the single controlled wave `y'' + A y = B v`.
pub fn verify_scalar_transposition(
    space: &Space,
    observer: &Observer,
    grid: &TimeGrid,
    control: &[DVector<f64>],
    y0: &crate::dynamics::ComponentState,
    samples: usize,
    seed: u64,
) -> Result<TranspositionReport, HumError> {
    let n = space.n_modes();
    let zero = CouplingOperator::zero(space, (0.0, 1.0))?;
    let z = crate::dynamics::ComponentState::zeros(n);
    let forces: Vec<DVector<f64>> = control.iter().map(|v| observer.control_to_force(v)).collect();
    let y = evolve_controlled(space, &CascadeState::from_components(&z, y0), &zero, grid, &forces)?;
    let w = grid.simpson_weights();
    let mut rng = sampling::rng(seed);
    let mut residuals = Vec::with_capacity(samples);
    for _ in 0..samples {
        let wc = sampling::random_component(n, &mut rng);
        let wt = CascadeState::from_components(&z, &wc);
        let adj = evolve_cascade(space, &wt.with_negated_velocities(), &zero, grid)?;
        let adj: Vec<CascadeState> = adj.states.iter().rev().map(|s| s.with_negated_velocities()).collect();
        let lhs = pairing(y.final_state(), &wt) - pairing(&CascadeState::from_components(&z, y0), &adj[0]);
        let terms: Vec<f64> = forces.iter().zip(&adj).zip(&w).map(|((f, s), wk)| wk * f.dot(&s.u2)).collect();
        let rhs: f64 = terms.iter().sum();
        let scale = terms.iter().map(|t| t.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        residuals.push((lhs - rhs).abs() / scale);
    }
    let max_relative = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(TranspositionReport { residuals, max_relative })
}
