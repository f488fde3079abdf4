//! Time evolution of the two-component cascade
//!
//! ```text
//! u1'' + A u1          = 0
//! u2'' + A u2 + C u1   = 0
//! ```
//!
//! in modal coordinates, together with its controlled dual (where the second
//! component drives the first), the generator and its inverse, level-k
//! energies and the observation operators.
//!
//! # Time stepping
//!
//! One step of length `h` propagates each mode exactly by the rotation
//! `R(h)` and adds the Duhamel integral of the coupling force, evaluated with
//! Simpson's rule at `0, h/2, h`. The driving component is free inside a step,
//! so its position at the Simpson nodes is known in closed form and the
//! scheme is fourth order with no stiffness from `A`.
//!
//! The controlled solver applies the same step with the roles of the two
//! components exchanged and injects sources as Simpson-weighted velocity
//! impulses at the grid nodes. This makes it the exact discrete dual of the
//! backward solver, so duality pairings hold to rounding error.

use crate::spectral::{eigenfunction, eigenfunction_derivative, CoefficientFunction, ModalCoefficients, SpectralError};
use crate::Space;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("time step too coarse: dt*sqrt(lambda_N) = {value:.4} exceeds {limit}")]
    Resolution { value: f64, limit: f64 },
    #[error("Simpson time quadrature needs an even positive step count, got {0}")]
    OddSteps(usize),
    #[error("horizon must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("coupling: {0}")]
    Coupling(String),
    #[error("observer: {0}")]
    Observer(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Position and velocity of one wave component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentState {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
}

impl ComponentState {
    pub fn new(u: DVector<f64>, v: DVector<f64>) -> Self {
        Self { u, v }
    }

    pub fn zeros(n: usize) -> Self {
        Self { u: DVector::zeros(n), v: DVector::zeros(n) }
    }

    pub fn from_modal(u: &ModalCoefficients<f64>, v: &ModalCoefficients<f64>) -> Self {
        Self { u: DVector::from_column_slice(u.as_slice()), v: DVector::from_column_slice(v.as_slice()) }
    }
}

/// `U = (u1, u2, v1, v2)` with `v_i = u_i'`.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeState {
    pub u1: DVector<f64>,
    pub u2: DVector<f64>,
    pub v1: DVector<f64>,
    pub v2: DVector<f64>,
}

impl CascadeState {
    pub fn zeros(n: usize) -> Self {
        Self { u1: DVector::zeros(n), u2: DVector::zeros(n), v1: DVector::zeros(n), v2: DVector::zeros(n) }
    }

    pub fn new(u1: DVector<f64>, u2: DVector<f64>, v1: DVector<f64>, v2: DVector<f64>) -> Self {
        Self { u1, u2, v1, v2 }
    }

    pub fn n_modes(&self) -> usize {
        self.u1.len()
    }

    /// Stacks the blocks in the order `u1, u2, v1, v2`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.n_modes();
        let mut x = DVector::zeros(4 * n);
        x.rows_mut(0, n).copy_from(&self.u1);
        x.rows_mut(n, n).copy_from(&self.u2);
        x.rows_mut(2 * n, n).copy_from(&self.v1);
        x.rows_mut(3 * n, n).copy_from(&self.v2);
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() / 4;
        Self {
            u1: x.rows(0, n).into_owned(),
            u2: x.rows(n, n).into_owned(),
            v1: x.rows(2 * n, n).into_owned(),
            v2: x.rows(3 * n, n).into_owned(),
        }
    }

    fn from_column(x: &DMatrix<f64>, col: usize) -> Self {
        let n = x.nrows() / 4;
        let c = x.column(col);
        Self {
            u1: c.rows(0, n).into_owned(),
            u2: c.rows(n, n).into_owned(),
            v1: c.rows(2 * n, n).into_owned(),
            v2: c.rows(3 * n, n).into_owned(),
        }
    }

    pub fn component1(&self) -> ComponentState {
        ComponentState::new(self.u1.clone(), self.v1.clone())
    }

    pub fn component2(&self) -> ComponentState {
        ComponentState::new(self.u2.clone(), self.v2.clone())
    }

    pub fn from_components(c1: &ComponentState, c2: &ComponentState) -> Self {
        Self::new(c1.u.clone(), c2.u.clone(), c1.v.clone(), c2.v.clone())
    }

    pub fn with_negated_velocities(&self) -> Self {
        Self::new(self.u1.clone(), self.u2.clone(), -&self.v1, -&self.v2)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(&self.u1 * s, &self.u2 * s, &self.v1 * s, &self.v2 * s)
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(&self.u1 + &o.u1, &self.u2 + &o.u2, &self.v1 + &o.v1, &self.v2 + &o.v2)
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scaled(-1.0))
    }
}

/// Multiplication by the coupling coefficient, with its coercivity data.
#[derive(Debug, Clone)]
pub struct CouplingOperator {
    /// `C_jk = int c phi_j phi_k`.
    pub matrix: DMatrix<f64>,
    /// Modal matrix of the sharp indicator of the core region.
    pub projector: DMatrix<f64>,
    /// Infimum of the coefficient on the closed core region.
    pub alpha: f64,
    /// Supremum of the coefficient.
    pub beta: f64,
    pub core: (f64, f64),
}

impl CouplingOperator {
    /// Builds the operator from a coefficient with a declared core region.
    pub fn new(space: &Space, coefficient: &CoefficientFunction<f64>) -> Result<Self, DynamicsError> {
        let core = coefficient
            .core()
            .ok_or_else(|| DynamicsError::Coupling("coefficient has no core region".into()))?;
        let alpha = coefficient.infimum_on(core.0, core.1);
        let beta = coefficient.sup_norm();
        if alpha <= 0.0 {
            return Err(DynamicsError::Coupling(format!(
                "coefficient must be positive on the core region [{}, {}]",
                core.0, core.1
            )));
        }
        let indicator = CoefficientFunction::indicator(core.0, core.1)?;
        Ok(Self {
            matrix: space.assemble_multiplication_matrix(coefficient),
            projector: space.assemble_multiplication_matrix(&indicator),
            alpha,
            beta,
            core,
        })
    }

    /// The zero coupling (decoupled system); coercivity data are zero.
    pub fn zero(space: &Space, core: (f64, f64)) -> Result<Self, DynamicsError> {
        let n = space.n_modes();
        let indicator = CoefficientFunction::indicator(core.0, core.1)?;
        Ok(Self {
            matrix: DMatrix::zeros(n, n),
            projector: space.assemble_multiplication_matrix(&indicator),
            alpha: 0.0,
            beta: 0.0,
            core,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_zero(&self) -> bool {
        self.matrix.iter().all(|&v| v == 0.0)
    }

    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.matrix * w
    }

    /// Spectral norm of the truncated matrix.
    pub fn matrix_norm(&self) -> f64 {
        self.matrix.clone().symmetric_eigen().eigenvalues.iter().fold(0.0, |a: f64, v| a.max(v.abs()))
    }

    /// `|Cw|^2 - beta <Cw, w>`, nonpositive when the quadratic bound holds.
    pub fn quadratic_bound_excess(&self, w: &DVector<f64>) -> f64 {
        let cw = self.apply(w);
        cw.norm_squared() - self.beta * cw.dot(w)
    }

    /// `alpha |Pi w|^2 - <Cw, w>`, nonpositive when partial coercivity holds.
    pub fn coercivity_excess(&self, w: &DVector<f64>) -> f64 {
        self.alpha * w.dot(&(&self.projector * w)) - w.dot(&self.apply(w))
    }
}

/// Observed region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Interval(f64, f64),
    Boundary { left: bool, right: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObserverKind {
    InteriorVelocity,
    BoundaryNormalDerivative,
}

/// Observation sample at one instant.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationSample {
    /// `b(x) u'(x)` at the observer's quadrature nodes.
    Field { nodes: Vec<f64>, values: Vec<f64> },
    /// `b_left du/dnu(0)` and `b_right du/dnu(1)`.
    Endpoints { left: f64, right: f64 },
}

/// Interior velocity or boundary normal derivative observation.
///
/// The observation is a linear map from modal coefficients to `channels`
/// values (quadrature nodes or endpoints). With channel weights `w`, the
/// squared observation norm is `x^T O^T diag(w) O x`, and the same matrix
/// `O^T diag(w)` maps control samples back to modal forces.
#[derive(Debug, Clone)]
pub struct Observer {
    kind: ObserverKind,
    region: Option<Region>,
    weight: Option<CoefficientFunction<f64>>,
    endpoint_weights: (f64, f64),
    nodes: Vec<f64>,
    channel_weights: DVector<f64>,
    operator: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl Observer {
    /// Observation `b u2'` on the support of `weight`.
    ///
    /// When `region` is given, `weight` must be positive on its closure.
    pub fn interior(
        space: &Space,
        weight: &CoefficientFunction<f64>,
        region: Option<(f64, f64)>,
    ) -> Result<Self, DynamicsError> {
        if let Some((a, b)) = region {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a >= b {
                return Err(DynamicsError::Observer(format!("region ({a}, {b}) is not a subinterval of (0, 1)")));
            }
            if weight.infimum_on(a, b) <= 0.0 {
                return Err(DynamicsError::Observer(format!("weight vanishes somewhere on [{a}, {b}]")));
            }
        }
        let q = space.fitted_rule(&weight.breakpoints());
        let mut nodes = Vec::new();
        let mut cw = Vec::new();
        let mut bvals = Vec::new();
        for (&x, &w) in q.nodes.iter().zip(&q.weights) {
            let b = weight.eval(x);
            if b != 0.0 {
                nodes.push(x);
                cw.push(w);
                bvals.push(b);
            }
        }
        let n = space.n_modes();
        let operator = DMatrix::from_fn(nodes.len(), n, |i, k| bvals[i] * eigenfunction(k + 1, nodes[i]));
        let channel_weights = DVector::from_vec(cw);
        let gram = gram_of(&operator, &channel_weights);
        Ok(Self {
            kind: ObserverKind::InteriorVelocity,
            region: region.map(|(a, b)| Region::Interval(a, b)),
            weight: Some(weight.clone()),
            endpoint_weights: (0.0, 0.0),
            nodes,
            channel_weights,
            operator,
            gram,
        })
    }

    /// Weighted outward normal derivatives at the endpoints.
    pub fn boundary(space: &Space, b_left: f64, b_right: f64) -> Result<Self, DynamicsError> {
        if b_left < 0.0 || b_right < 0.0 || !b_left.is_finite() || !b_right.is_finite() {
            return Err(DynamicsError::Observer("endpoint weights must be finite and nonnegative".into()));
        }
        let n = space.n_modes();
        let operator = DMatrix::from_fn(2, n, |e, k| {
            if e == 0 {
                -b_left * eigenfunction_derivative(k + 1, 0.0)
            } else {
                b_right * eigenfunction_derivative(k + 1, 1.0)
            }
        });
        let channel_weights = DVector::from_element(2, 1.0);
        let gram = gram_of(&operator, &channel_weights);
        let region = (b_left > 0.0 || b_right > 0.0).then_some(Region::Boundary { left: b_left > 0.0, right: b_right > 0.0 });
        Ok(Self {
            kind: ObserverKind::BoundaryNormalDerivative,
            region,
            weight: None,
            endpoint_weights: (b_left, b_right),
            nodes: vec![0.0, 1.0],
            channel_weights,
            operator,
            gram,
        })
    }

    pub fn kind(&self) -> ObserverKind {
        self.kind
    }

    pub fn region(&self) -> Option<Region> {
        self.region
    }

    pub fn weight(&self) -> Option<&CoefficientFunction<f64>> {
        self.weight.as_ref()
    }

    pub fn endpoint_weights(&self) -> (f64, f64) {
        self.endpoint_weights
    }

    /// Spatial nodes of the observation channels.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn channels(&self) -> usize {
        self.operator.nrows()
    }

    /// Modal-to-channel map `O`.
    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    pub fn channel_weights(&self) -> &DVector<f64> {
        &self.channel_weights
    }

    /// `O^T diag(w) O`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// True when the observation reads velocities rather than positions.
    pub fn reads_velocity(&self) -> bool {
        self.kind == ObserverKind::InteriorVelocity
    }

    /// The observed modal vector of a component: velocity (interior) or position (boundary).
    pub fn observed<'a>(&self, c: &'a ComponentState) -> &'a DVector<f64> {
        if self.reads_velocity() {
            &c.v
        } else {
            &c.u
        }
    }

    pub fn observe(&self, u2: &ComponentState) -> ObservationSample {
        let vals = &self.operator * self.observed(u2);
        match self.kind {
            ObserverKind::InteriorVelocity => ObservationSample::Field { nodes: self.nodes.clone(), values: vals.as_slice().to_vec() },
            ObserverKind::BoundaryNormalDerivative => ObservationSample::Endpoints { left: vals[0], right: vals[1] },
        }
    }

    /// Squared observation norm of the second component.
    pub fn norm_sq(&self, u2: &ComponentState) -> f64 {
        let x = self.observed(u2);
        x.dot(&(&self.gram * x))
    }

    /// Modal force `O^T diag(w) v` produced by control samples `v`.
    pub fn control_to_force(&self, v: &DVector<f64>) -> DVector<f64> {
        self.operator.transpose() * v.component_mul(&self.channel_weights)
    }

    /// Control samples `O x` read off a modal vector.
    pub fn read(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.operator * x
    }
}

fn gram_of(op: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut weighted = op.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= w[i];
    }
    op.transpose() * weighted
}

/// Resolution-independent description of an observer.
#[derive(Debug, Clone, PartialEq)]
pub enum ObserverSpec {
    Interior { weight: CoefficientFunction<f64>, region: Option<(f64, f64)> },
    Boundary { left: f64, right: f64 },
}

impl ObserverSpec {
    pub fn build(&self, space: &Space) -> Result<Observer, DynamicsError> {
        match self {
            ObserverSpec::Interior { weight, region } => Observer::interior(space, weight, *region),
            ObserverSpec::Boundary { left, right } => Observer::boundary(space, *left, *right),
        }
    }

    pub fn region(&self) -> Option<Region> {
        match self {
            ObserverSpec::Interior { region, .. } => region.map(|(a, b)| Region::Interval(a, b)),
            ObserverSpec::Boundary { left, right } => {
                (*left > 0.0 || *right > 0.0).then_some(Region::Boundary { left: *left > 0.0, right: *right > 0.0 })
            }
        }
    }
}

/// Coupling coefficient and observer, buildable at any truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    /// `None` means no coupling; the core region is then still needed for the projector.
    pub coupling: Option<CoefficientFunction<f64>>,
    pub core: (f64, f64),
    pub observer: ObserverSpec,
}

impl Geometry {
    pub fn build(&self, space: &Space) -> Result<(CouplingOperator, Observer), DynamicsError> {
        let c = match &self.coupling {
            Some(f) if !f.is_zero() => CouplingOperator::new(space, f)?,
            _ => CouplingOperator::zero(space, self.core)?,
        };
        Ok((c, self.observer.build(space)?))
    }
}

/// Uniform time grid on `[0, T]` with Simpson weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
    allow_coarse: bool,
}

/// Default bound on `dt * sqrt(lambda_N)`.
pub const MAX_DT_OMEGA: f64 = 0.5;

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self, DynamicsError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(DynamicsError::Horizon(horizon));
        }
        if n_steps == 0 || n_steps % 2 == 1 {
            return Err(DynamicsError::OddSteps(n_steps));
        }
        Ok(Self { horizon, n_steps, allow_coarse: false })
    }

    /// Smallest even step count with `dt * sqrt(lambda_N) <= dt_omega`.
    pub fn resolved(horizon: f64, space: &Space, dt_omega: f64) -> Result<Self, DynamicsError> {
        let omega = space.max_eigenvalue().sqrt();
        let mut n = (horizon * omega / dt_omega).ceil() as usize;
        n = n.max(2);
        if n % 2 == 1 {
            n += 1;
        }
        Self::new(horizon, n)
    }

    /// Lifts the resolution check (for deliberate under-resolved runs).
    pub fn allowing_coarse(mut self) -> Self {
        self.allow_coarse = true;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Composite Simpson weights on the nodes.
    pub fn simpson_weights(&self) -> Vec<f64> {
        let h = self.dt();
        (0..=self.n_steps)
            .map(|k| {
                let w = if k == 0 || k == self.n_steps {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * h / 3.0
            })
            .collect()
    }

    pub fn check(&self, space: &Space) -> Result<(), DynamicsError> {
        let value = self.dt() * space.max_eigenvalue().sqrt();
        if value > MAX_DT_OMEGA && !self.allow_coarse {
            return Err(DynamicsError::Resolution { value, limit: MAX_DT_OMEGA });
        }
        Ok(())
    }
}

/// Which component evolves freely inside a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    First,
    Second,
}

impl Driver {
    fn other(self) -> Self {
        match self {
            Driver::First => Driver::Second,
            Driver::Second => Driver::First,
        }
    }

    /// Row offsets of the position and velocity blocks.
    fn rows(self, n: usize) -> (usize, usize) {
        match self {
            Driver::First => (0, 2 * n),
            Driver::Second => (n, 3 * n),
        }
    }
}

/// One-step propagator acting on columns of stacked states.
///
/// Columns of the state matrix hold `(x1, x2, y1, y2)` blocks where `x` are
/// positions and `y` velocities. The driver component is rotated exactly; the
/// other one is rotated and receives the Simpson-Duhamel integral of
/// `-C x_driver(t)`.
#[derive(Debug, Clone)]
pub struct StepKernel<'a> {
    n: usize,
    h: f64,
    omega: Vec<f64>,
    cos_h: Vec<f64>,
    sin_h: Vec<f64>,
    cos_half: Vec<f64>,
    sin_half: Vec<f64>,
    coupling: &'a DMatrix<f64>,
}

impl<'a> StepKernel<'a> {
    pub fn new(space: &Space, coupling: &'a DMatrix<f64>, h: f64) -> Self {
        let omega: Vec<f64> = space.eigenvalues().iter().map(|l| l.sqrt()).collect();
        Self {
            n: space.n_modes(),
            h,
            cos_h: omega.iter().map(|w| (w * h).cos()).collect(),
            sin_h: omega.iter().map(|w| (w * h).sin()).collect(),
            cos_half: omega.iter().map(|w| (0.5 * w * h).cos()).collect(),
            sin_half: omega.iter().map(|w| (0.5 * w * h).sin()).collect(),
            omega,
            coupling,
        }
    }

    pub fn step(&self, x: &mut DMatrix<f64>, driver: Driver) {
        let n = self.n;
        let k = x.ncols();
        let (dp, dv) = driver.rows(n);
        let (rp, rv) = driver.other().rows(n);
        let p0 = x.rows(dp, n).into_owned();
        let v0 = x.rows(dv, n).into_owned();
        let mut ph = DMatrix::zeros(n, k);
        let mut p1 = DMatrix::zeros(n, k);
        for j in 0..k {
            for i in 0..n {
                let (a, b) = (p0[(i, j)], v0[(i, j)]);
                let w = self.omega[i];
                ph[(i, j)] = self.cos_half[i] * a + self.sin_half[i] / w * b;
                p1[(i, j)] = self.cos_h[i] * a + self.sin_h[i] / w * b;
            }
        }
        let f0 = -(self.coupling * &p0);
        let fh = -(self.coupling * &ph);
        let f1 = -(self.coupling * &p1);
        let h6 = self.h / 6.0;
        for j in 0..k {
            for i in 0..n {
                let w = self.omega[i];
                let (c, s) = (self.cos_h[i], self.sin_h[i]);
                // driver: exact rotation
                let (a, b) = (p0[(i, j)], v0[(i, j)]);
                x[(dp + i, j)] = p1[(i, j)];
                x[(dv + i, j)] = -w * s * a + c * b;
                // driven: rotation plus Simpson-Duhamel forcing
                let (ra, rb) = (x[(rp + i, j)], x[(rv + i, j)]);
                let (fa, fb, fc) = (f0[(i, j)], fh[(i, j)], f1[(i, j)]);
                x[(rp + i, j)] = c * ra + s / w * rb + h6 * (s / w * fa + 4.0 * self.sin_half[i] / w * fb);
                x[(rv + i, j)] = -w * s * ra + c * rb + h6 * (c * fa + 4.0 * self.cos_half[i] * fb + fc);
            }
        }
    }

    /// Transpose of [`StepKernel::step`] with the same driver.
    pub fn step_transpose(&self, x: &mut DMatrix<f64>, driver: Driver) {
        swap_position_velocity(x);
        self.step(x, driver.other());
        swap_position_velocity(x);
    }

    /// Position at mid-step of the freely evolving component.
    pub fn midpoint_position(&self, x: &DMatrix<f64>, col: usize, driver: Driver) -> DVector<f64> {
        let (dp, dv) = driver.rows(self.n);
        DVector::from_fn(self.n, |i, _| {
            self.cos_half[i] * x[(dp + i, col)] + self.sin_half[i] / self.omega[i] * x[(dv + i, col)]
        })
    }
}

fn swap_position_velocity(x: &mut DMatrix<f64>) {
    let half = x.nrows() / 2;
    for j in 0..x.ncols() {
        for i in 0..half {
            x.swap((i, j), (i + half, j));
        }
    }
}

/// States at every node of a grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<CascadeState>,
}

impl Trajectory {
    pub fn final_state(&self) -> &CascadeState {
        self.states.last().expect("nonempty trajectory")
    }

    /// Simpson quadrature of `f(state)` over the grid.
    pub fn integrate<F: Fn(&CascadeState) -> f64>(&self, f: F) -> f64 {
        self.grid.simpson_weights().iter().zip(&self.states).map(|(w, s)| w * f(s)).sum()
    }
}

/// Exact evolution of a single free wave over time `t`.
pub fn free_evolve(space: &Space, state: &ComponentState, t: f64) -> ComponentState {
    let mut u = state.u.clone();
    let mut v = state.v.clone();
    for (i, l) in space.eigenvalues().iter().enumerate() {
        let w = l.sqrt();
        let (c, s) = ((w * t).cos(), (w * t).sin());
        let (a, b) = (state.u[i], state.v[i]);
        u[i] = a * c + b / w * s;
        v[i] = -w * a * s + b * c;
    }
    ComponentState::new(u, v)
}

fn check_dims(space: &Space, s: &CascadeState) -> Result<(), DynamicsError> {
    if s.n_modes() != space.n_modes() {
        return Err(DynamicsError::Dimension { expected: space.n_modes(), got: s.n_modes() });
    }
    Ok(())
}

/// Forward solution of the cascade from `u0` at every grid node.
pub fn evolve_cascade(
    space: &Space,
    u0: &CascadeState,
    coupling: &CouplingOperator,
    grid: &TimeGrid,
) -> Result<Trajectory, DynamicsError> {
    check_dims(space, u0)?;
    grid.check(space)?;
    let kernel = StepKernel::new(space, &coupling.matrix, grid.dt());
    let mut x = DMatrix::from_column_slice(4 * space.n_modes(), 1, u0.to_vector().as_slice());
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    states.push(u0.clone());
    for _ in 0..grid.n_steps() {
        kernel.step(&mut x, Driver::First);
        states.push(CascadeState::from_column(&x, 0));
    }
    Ok(Trajectory { grid: *grid, states })
}

/// Solution with data prescribed at `t = T`, returned in forward time order.
///
/// Evolves the velocity-negated final state forward and reflects in time.
pub fn evolve_cascade_backward(
    space: &Space,
    ut: &CascadeState,
    coupling: &CouplingOperator,
    grid: &TimeGrid,
) -> Result<Trajectory, DynamicsError> {
    let fwd = evolve_cascade(space, &ut.with_negated_velocities(), coupling, grid)?;
    let states = fwd.states.iter().rev().map(|s| s.with_negated_velocities()).collect();
    Ok(Trajectory { grid: *grid, states })
}

/// Propagates a batch of initial states (columns) and calls `visit(k, X_k)` at every node.
pub fn evolve_batch<F>(
    space: &Space,
    x0: &DMatrix<f64>,
    coupling: &CouplingOperator,
    grid: &TimeGrid,
    mut visit: F,
) -> Result<(), DynamicsError>
where
    F: FnMut(usize, &DMatrix<f64>),
{
    grid.check(space)?;
    if x0.nrows() != 4 * space.n_modes() {
        return Err(DynamicsError::Dimension { expected: 4 * space.n_modes(), got: x0.nrows() });
    }
    let kernel = StepKernel::new(space, &coupling.matrix, grid.dt());
    let mut x = x0.clone();
    visit(0, &x);
    for k in 1..=grid.n_steps() {
        kernel.step(&mut x, Driver::First);
        visit(k, &x);
    }
    Ok(())
}

/// Controlled solution sampled at the nodes and at mid-steps.
#[derive(Debug, Clone)]
pub struct ControlledTrajectory {
    pub grid: TimeGrid,
    /// State at each node after that node's impulse.
    pub states: Vec<CascadeState>,
    /// Position of the second component at the midpoint of each step.
    pub midpoint_y2: Vec<DVector<f64>>,
}

impl ControlledTrajectory {
    pub fn final_state(&self) -> &CascadeState {
        self.states.last().expect("nonempty trajectory")
    }

    /// Second-component positions on the refined grid (nodes and midpoints interleaved).
    pub fn refined_y2(&self) -> Vec<&DVector<f64>> {
        let mut out = Vec::with_capacity(2 * self.midpoint_y2.len() + 1);
        for (k, s) in self.states.iter().enumerate() {
            out.push(&s.u2);
            if k < self.midpoint_y2.len() {
                out.push(&self.midpoint_y2[k]);
            }
        }
        out
    }
}

/// Solves `y1'' + A y1 + C y2 = 0`, `y2'' + A y2 = f(t)` from `y0`.
///
/// `forces[k]` is the modal force at node `k` (empty slice: unforced). It is
/// injected into `y2'` with the Simpson weight of that node.
pub fn evolve_controlled(
    space: &Space,
    y0: &CascadeState,
    coupling: &CouplingOperator,
    grid: &TimeGrid,
    forces: &[DVector<f64>],
) -> Result<ControlledTrajectory, DynamicsError> {
    check_dims(space, y0)?;
    grid.check(space)?;
    if !forces.is_empty() && forces.len() != grid.n_steps() + 1 {
        return Err(DynamicsError::Dimension { expected: grid.n_steps() + 1, got: forces.len() });
    }
    let n = space.n_modes();
    let kernel = StepKernel::new(space, &coupling.matrix, grid.dt());
    let weights = grid.simpson_weights();
    let mut x = DMatrix::from_column_slice(4 * n, 1, y0.to_vector().as_slice());
    let mut states = Vec::with_capacity(grid.n_steps() + 1);
    let mut mids = Vec::with_capacity(grid.n_steps());
    for k in 0..=grid.n_steps() {
        if let Some(f) = forces.get(k) {
            for i in 0..n {
                x[(3 * n + i, 0)] += weights[k] * f[i];
            }
        }
        states.push(CascadeState::from_column(&x, 0));
        if k < grid.n_steps() {
            mids.push(kernel.midpoint_position(&x, 0, Driver::Second));
            kernel.step(&mut x, Driver::Second);
        }
    }
    Ok(ControlledTrajectory { grid: *grid, states, midpoint_y2: mids })
}

/// Solves `p'' + A p = f(t)` with Simpson-Duhamel steps and returns node states.
pub fn evolve_forced_wave<F>(
    space: &Space,
    p0: &ComponentState,
    force: F,
    grid: &TimeGrid,
) -> Result<Vec<ComponentState>, DynamicsError>
where
    F: Fn(f64) -> DVector<f64>,
{
    grid.check(space)?;
    let h = grid.dt();
    let omega: Vec<f64> = space.eigenvalues().iter().map(|l| l.sqrt()).collect();
    let mut cur = p0.clone();
    let mut out = vec![cur.clone()];
    let mut f_start = force(0.0);
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        let f_mid = force(t + 0.5 * h);
        let f_end = force(t + h);
        let mut next = free_evolve(space, &cur, h);
        for (i, &w) in omega.iter().enumerate() {
            let kp = |tau: f64| (w * tau).sin() / w;
            let kv = |tau: f64| (w * tau).cos();
            next.u[i] += h / 6.0 * (kp(h) * f_start[i] + 4.0 * kp(0.5 * h) * f_mid[i]);
            next.v[i] += h / 6.0 * (kv(h) * f_start[i] + 4.0 * kv(0.5 * h) * f_mid[i] + f_end[i]);
        }
        out.push(next.clone());
        cur = next;
        f_start = f_end;
    }
    Ok(out)
}

/// `A U = (v1, v2, -A u1, -A u2 - C u1)`.
pub fn apply_generator(space: &Space, u: &CascadeState, coupling: &CouplingOperator) -> CascadeState {
    let lam = DVector::from_column_slice(space.eigenvalues());
    CascadeState::new(
        u.v1.clone(),
        u.v2.clone(),
        -u.u1.component_mul(&lam),
        -u.u2.component_mul(&lam) - coupling.apply(&u.u1),
    )
}

/// Inverse generator: `w1 = -A^{-1} v1`, `w2 = -A^{-1} v2 + A^{-1} C A^{-1} v1`, velocities `(u1, u2)`.
pub fn invert_generator(space: &Space, u: &CascadeState, coupling: &CouplingOperator) -> CascadeState {
    let inv = DVector::from_iterator(space.n_modes(), space.eigenvalues().iter().map(|l| 1.0 / l));
    let a_inv_v1 = u.v1.component_mul(&inv);
    let w1 = -&a_inv_v1;
    let w2 = -u.v2.component_mul(&inv) + coupling.apply(&a_inv_v1).component_mul(&inv);
    CascadeState::new(w1, w2, u.u1.clone(), u.u2.clone())
}

/// `k`-fold application of [`invert_generator`].
pub fn iterate_inverse(space: &Space, u: &CascadeState, coupling: &CouplingOperator, k: usize) -> CascadeState {
    (0..k).fold(u.clone(), |w, _| invert_generator(space, &w, coupling))
}

/// `e_k(u, u') = (|A^{k/2} u|^2 + |A^{(k-1)/2} u'|^2) / 2`.
pub fn energy(space: &Space, c: &ComponentState, k: i32) -> f64 {
    let mut e = 0.0;
    for (i, l) in space.eigenvalues().iter().enumerate() {
        e += l.powi(k) * c.u[i] * c.u[i] + l.powi(k - 1) * c.v[i] * c.v[i];
    }
    0.5 * e
}

/// Diagonal weights `d` with `energy(space, c, k) = sum d_i (u_i^2 + ...)`, as (position, velocity).
pub fn energy_weights(space: &Space, k: i32) -> (DVector<f64>, DVector<f64>) {
    let n = space.n_modes();
    let l = space.eigenvalues();
    (
        DVector::from_fn(n, |i, _| 0.5 * l[i].powi(k)),
        DVector::from_fn(n, |i, _| 0.5 * l[i].powi(k - 1)),
    )
}

pub fn observe(obs: &Observer, u2: &ComponentState) -> ObservationSample {
    obs.observe(u2)
}

/// Residuals of the energy relations between `W` and `Z = A^{-1} W`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseEnergyReport {
    pub e0_z1: f64,
    pub em1_w1: f64,
    pub e0_w2: f64,
    pub e1_z2: f64,
    /// `|e0(Z1) - e_{-1}(W1)|`.
    pub identity_residual: f64,
    /// Constant bounding `e0(W2)` by `e0(Z1) + e1(Z2)`.
    pub c_upper: f64,
    /// Constant bounding `e1(Z2)` by `e_{-1}(W1) + e0(W2)`.
    pub c_lower: f64,
    /// `c_upper (e0(Z1) + e1(Z2)) - e0(W2)`.
    pub margin_upper: f64,
    /// `c_lower (e_{-1}(W1) + e0(W2)) - e1(Z2)`.
    pub margin_lower: f64,
    /// `(e_{-1}(W1) + e0(W2)) / (e0(Z1) + e1(Z2))`, NaN for zero data.
    pub equivalence_ratio: f64,
    /// Two-sided bounds `c1 <= ratio <= c2` implied by the constants above.
    pub c1: f64,
    pub c2: f64,
}

impl InverseEnergyReport {
    pub fn holds(&self, tol: f64) -> bool {
        let scale = (self.e0_z1 + self.e1_z2 + self.em1_w1 + self.e0_w2).max(f64::MIN_POSITIVE);
        self.identity_residual <= tol * scale.max(1.0)
            && self.margin_upper >= -tol * scale
            && self.margin_lower >= -tol * scale
            && (self.equivalence_ratio.is_nan()
                || (self.equivalence_ratio >= self.c1 * (1.0 - tol) && self.equivalence_ratio <= self.c2 * (1.0 + tol)))
    }
}

/// Evaluates the identity `e0(Z1) = e_{-1}(W1)` and the norm equivalences between `W` and `Z = A^{-1} W`.
pub fn inverse_energy_check(space: &Space, w: &CascadeState, coupling: &CouplingOperator) -> InverseEnergyReport {
    let z = invert_generator(space, w, coupling);
    let e0_z1 = energy(space, &z.component1(), 0);
    let em1_w1 = energy(space, &w.component1(), -1);
    let e0_w2 = energy(space, &w.component2(), 0);
    let e1_z2 = energy(space, &z.component2(), 1);
    let cn = coupling.matrix_norm();
    let c = (2.0f64).max(2.0 * cn * cn / space.eigenvalues()[0]);
    let ratio = if e0_z1 + e1_z2 > 0.0 { (em1_w1 + e0_w2) / (e0_z1 + e1_z2) } else { f64::NAN };
    InverseEnergyReport {
        e0_z1,
        em1_w1,
        e0_w2,
        e1_z2,
        identity_residual: (e0_z1 - em1_w1).abs(),
        c_upper: c,
        c_lower: c,
        margin_upper: c * (e0_z1 + e1_z2) - e0_w2,
        margin_lower: c * (em1_w1 + e0_w2) - e1_z2,
        equivalence_ratio: ratio,
        c1: 1.0 / (1.0 + c),
        c2: 1.0 + c,
    }
}
