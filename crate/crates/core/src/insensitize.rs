//! Insensitizing controls for the scalar wave equation
//!
//! ```text
//! y'' + A y = xi + B v,   y(0) = y0 + tau0 z0,   y'(0) = y1 + tau1 z1
//! Phi = 1/2 int_0^T int c y^2
//! ```
//!
//! A control insensitizes `Phi` when both derivatives in `tau` vanish at zero
//! for all unit perturbations. This is equivalent to nulling the first
//! component of the controlled cascade with data `(0, y0, 0, y1)`, where the
//! first component is driven by `-c y`: for a free wave `w` from `(z0, 0)`,
//!
//! ```text
//! dPhi/dtau0 = int_0^T <C y, w> = -[Y1(T), W(T)]
//! ```
//!
//! and likewise for `tau1` with data `(0, z1)`. The control is therefore
//! synthesized by the HUM solver and certified both through the sensitivity
//! pairings and by finite differences of `Phi`.

use crate::dynamics::{
    evolve_controlled, free_evolve, CascadeState, ComponentState, ControlledTrajectory, CouplingOperator,
    DynamicsError, Observer, ObserverKind, Region, TimeGrid,
};
use crate::hum::{solve_hum, state_norms, ControlCase, HumError, HumProblem, StateNorms};
use crate::observability::gcc_min_time;
use crate::{sampling, Space};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InsensitizeError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Hum(#[from] HumError),
    #[error("region {region:?} needs a horizon above {min_time}, got {horizon}")]
    Geometry { region: Region, min_time: f64, horizon: f64 },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// Thresholds of the certificate.
pub const NULLING_TOL: f64 = 1e-6;
pub const DERIVATIVE_TOL: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-5;
pub const MIN_EXPONENT: f64 = 1.9;

/// Known data, source, weights and verification settings.
#[derive(Debug, Clone)]
pub struct InsensitizeProblem {
    pub y0: DVector<f64>,
    pub y1: DVector<f64>,
    /// Modal source at each grid node; empty for none.
    pub source: Vec<DVector<f64>>,
    /// Multiplication by the observation weight `c`.
    pub coupling: CouplingOperator,
    /// Control operator (interior weight or endpoint weights).
    pub control: Observer,
    pub grid: TimeGrid,
    pub cg_tolerance: f64,
    /// Number of random unit perturbations added to the modal ones.
    pub random_perturbations: usize,
    /// Number of leading modal perturbations.
    pub modal_perturbations: usize,
    pub seed: u64,
    /// Central difference steps, Richardson-combined.
    pub fd_steps: (f64, f64),
    /// Amplitudes for the robustness fit.
    pub taus: Vec<f64>,
}

impl InsensitizeProblem {
    pub fn new(
        y0: DVector<f64>,
        y1: DVector<f64>,
        coupling: CouplingOperator,
        control: Observer,
        grid: TimeGrid,
    ) -> Self {
        Self {
            y0,
            y1,
            source: Vec::new(),
            coupling,
            control,
            grid,
            cg_tolerance: 1e-10,
            random_perturbations: 10,
            modal_perturbations: 10,
            seed: 0,
            fd_steps: (1e-3, 1e-4),
            taus: vec![1e-1, 1e-2, 1e-3, 1e-4],
        }
    }

    pub fn case(&self) -> ControlCase {
        match self.control.kind() {
            ObserverKind::InteriorVelocity => ControlCase::Interior,
            ObserverKind::BoundaryNormalDerivative => ControlCase::Boundary,
        }
    }

    /// Sobolev indices in which `(z0, z1)` are normalized.
    pub fn perturbation_powers(&self) -> (i32, i32) {
        let p = self.case().state_powers();
        (p[1], p[3])
    }

    fn initial(&self, d0: Option<(&DVector<f64>, f64)>, d1: Option<(&DVector<f64>, f64)>) -> CascadeState {
        let n = self.y0.len();
        let mut u = self.y0.clone();
        let mut v = self.y1.clone();
        if let Some((z, t)) = d0 {
            u.axpy(t, z, 1.0);
        }
        if let Some((z, t)) = d1 {
            v.axpy(t, z, 1.0);
        }
        CascadeState::new(DVector::zeros(n), u, DVector::zeros(n), v)
    }

    fn hum_problem(&self) -> HumProblem {
        let mut p = HumProblem::new(self.case(), self.initial(None, None), self.coupling.clone(), self.control.clone(), self.grid);
        p.source = self.source.clone();
        p.cg_tolerance = self.cg_tolerance;
        // Without coupling the first component is unobserved but also unforced.
        p.skip_floor_check = self.coupling.is_zero();
        p
    }

    fn forces(&self, control: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.y0.len();
        if control.is_empty() && self.source.is_empty() {
            return Vec::new();
        }
        (0..=self.grid.n_steps())
            .map(|k| {
                let mut f = control.get(k).map(|v| self.control.control_to_force(v)).unwrap_or_else(|| DVector::zeros(n));
                if let Some(s) = self.source.get(k) {
                    f += s;
                }
                f
            })
            .collect()
    }

    /// Controlled cascade with perturbed data; `control` may be empty (`v = 0`).
    pub fn simulate(
        &self,
        space: &Space,
        control: &[DVector<f64>],
        d0: Option<(&DVector<f64>, f64)>,
        d1: Option<(&DVector<f64>, f64)>,
    ) -> Result<ControlledTrajectory, InsensitizeError> {
        if !control.is_empty() && control.len() != self.grid.n_steps() + 1 {
            return Err(InsensitizeError::Invalid("control must have one sample per grid node".into()));
        }
        Ok(evolve_controlled(space, &self.initial(d0, d1), &self.coupling, &self.grid, &self.forces(control))?)
    }

    fn validate(&self, space: &Space) -> Result<(), InsensitizeError> {
        let n = space.n_modes();
        if self.y0.len() != n || self.y1.len() != n {
            return Err(InsensitizeError::Invalid("initial data dimension differs from the space".into()));
        }
        if !self.source.is_empty() && self.source.len() != self.grid.n_steps() + 1 {
            return Err(InsensitizeError::Invalid("source must have one sample per grid node".into()));
        }
        if self.taus.len() < 2 || self.taus.iter().any(|t| !(*t > 0.0)) {
            return Err(InsensitizeError::Invalid("need at least two positive amplitudes".into()));
        }
        Ok(())
    }
}

/// `1/2 int_0^T <C y, y>` by composite Simpson on nodes and midpoints.
pub fn phi(y2: &[&DVector<f64>], weight: &DMatrix<f64>, grid: &TimeGrid) -> f64 {
    refined_simpson(grid, y2.len(), |i| y2[i].dot(&(weight * y2[i]))) * 0.5
}

fn refined_simpson<F: Fn(usize) -> f64>(grid: &TimeGrid, len: usize, f: F) -> f64 {
    debug_assert_eq!(len, 2 * grid.n_steps() + 1);
    let h = grid.dt() / 6.0;
    (0..len)
        .map(|i| {
            let w = if i == 0 || i + 1 == len {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h * f(i)
        })
        .sum()
}

fn refined_times(grid: &TimeGrid) -> Vec<f64> {
    (0..=2 * grid.n_steps()).map(|i| 0.5 * grid.dt() * i as f64).collect()
}

/// `Phi` of the controlled solution with perturbed data.
pub fn phi_of(
    space: &Space,
    problem: &InsensitizeProblem,
    control: &[DVector<f64>],
    d0: Option<(&DVector<f64>, f64)>,
    d1: Option<(&DVector<f64>, f64)>,
) -> Result<f64, InsensitizeError> {
    let tr = problem.simulate(space, control, d0, d1)?;
    Ok(phi(&tr.refined_y2(), &problem.coupling.matrix, &problem.grid))
}

/// `int <C y, w>` along the free waves `w` from `(z0, 0)` and `(0, z1)`.
pub fn sensitivity_derivatives(
    space: &Space,
    problem: &InsensitizeProblem,
    control: &[DVector<f64>],
    z0: &DVector<f64>,
    z1: &DVector<f64>,
) -> Result<(f64, f64), InsensitizeError> {
    let tr = problem.simulate(space, control, None, None)?;
    Ok(derivatives_along(space, problem, &tr, z0, z1))
}

fn derivatives_along(
    space: &Space,
    problem: &InsensitizeProblem,
    tr: &ControlledTrajectory,
    z0: &DVector<f64>,
    z1: &DVector<f64>,
) -> (f64, f64) {
    let y = tr.refined_y2();
    let cy: Vec<DVector<f64>> = y.iter().map(|v| &problem.coupling.matrix * *v).collect();
    let n = z0.len();
    let w0 = ComponentState::new(z0.clone(), DVector::zeros(n));
    let w1 = ComponentState::new(DVector::zeros(n), z1.clone());
    let times = refined_times(&problem.grid);
    let wave0: Vec<DVector<f64>> = times.iter().map(|t| free_evolve(space, &w0, *t).u).collect();
    let wave1: Vec<DVector<f64>> = times.iter().map(|t| free_evolve(space, &w1, *t).u).collect();
    (
        refined_simpson(&problem.grid, y.len(), |i| cy[i].dot(&wave0[i])),
        refined_simpson(&problem.grid, y.len(), |i| cy[i].dot(&wave1[i])),
    )
}

/// Same derivatives written as terminal pairings of the first cascade component.
pub fn derivatives_from_terminal_pairing(
    space: &Space,
    problem: &InsensitizeProblem,
    control: &[DVector<f64>],
    z0: &DVector<f64>,
    z1: &DVector<f64>,
) -> Result<(f64, f64), InsensitizeError> {
    let tr = problem.simulate(space, control, None, None)?;
    let y = tr.final_state().component1();
    let t = problem.grid.horizon();
    let n = z0.len();
    let pair = |w: &ComponentState| y.v.dot(&w.u) - y.u.dot(&w.v);
    let w0 = free_evolve(space, &ComponentState::new(z0.clone(), DVector::zeros(n)), t);
    let w1 = free_evolve(space, &ComponentState::new(DVector::zeros(n), z1.clone()), t);
    Ok((-pair(&w0), -pair(&w1)))
}

/// Derivatives along every unit modal direction `(e_j, e_j)`, unnormalized.
pub fn modal_derivatives(space: &Space, problem: &InsensitizeProblem, tr: &ControlledTrajectory) -> (DVector<f64>, DVector<f64>) {
    let y = tr.refined_y2();
    let cy: Vec<DVector<f64>> = y.iter().map(|v| &problem.coupling.matrix * *v).collect();
    let times = refined_times(&problem.grid);
    let om: Vec<f64> = space.eigenvalues().iter().map(|l| l.sqrt()).collect();
    let n = om.len();
    let d0 = DVector::from_fn(n, |j, _| refined_simpson(&problem.grid, y.len(), |i| cy[i][j] * (om[j] * times[i]).cos()));
    let d1 = DVector::from_fn(n, |j, _| refined_simpson(&problem.grid, y.len(), |i| cy[i][j] * (om[j] * times[i]).sin() / om[j]));
    (d0, d1)
}

/// A unit perturbation pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub id: String,
    pub z0: DVector<f64>,
    pub z1: DVector<f64>,
}

/// Leading modal directions followed by seeded random ones, all normalized.
pub fn perturbation_pool(space: &Space, problem: &InsensitizeProblem) -> Vec<Perturbation> {
    let n = space.n_modes();
    let (p0, p1) = problem.perturbation_powers();
    let unit = |z: DVector<f64>, p: i32| {
        let norm = z.iter().zip(space.eigenvalues()).map(|(c, l)| l.powi(p) * c * c).sum::<f64>().sqrt();
        z / norm
    };
    let mut pool = Vec::new();
    for j in 0..problem.modal_perturbations.min(n) {
        let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
        pool.push(Perturbation { id: format!("mode{}", j + 1), z0: unit(e.clone(), p0), z1: unit(e, p1) });
    }
    let mut rng = sampling::rng(problem.seed ^ 0x5eed);
    for j in 0..problem.random_perturbations {
        let z0 = unit(sampling::random_modal(n, 1.0, &mut rng), p0);
        let z1 = unit(sampling::random_modal(n, 1.0, &mut rng), p1);
        pool.push(Perturbation { id: format!("random{}", j + 1), z0, z1 });
    }
    pool
}

/// Analytic and finite-difference derivatives for one perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub id: String,
    pub d_tau0: f64,
    pub d_tau0_fd: f64,
    pub d_tau1: f64,
    pub d_tau1_fd: f64,
    /// Cauchy-Schwarz bounds `sqrt(2 Phi) sqrt(2 Phi_w)` for each slot.
    pub scale0: f64,
    pub scale1: f64,
}

impl DerivativeCheck {
    /// Largest derivative relative to its scale.
    pub fn relative_derivative(&self) -> f64 {
        ratio(self.d_tau0.abs(), self.scale0).max(ratio(self.d_tau1.abs(), self.scale1))
    }

    /// Largest analytic vs finite-difference gap, relative to the derivative or its scale.
    pub fn fd_disagreement(&self) -> f64 {
        let r = |a: f64, b: f64, s: f64| ratio((a - b).abs(), a.abs().max(b.abs()).max(s));
        r(self.d_tau0, self.d_tau0_fd, self.scale0).max(r(self.d_tau1, self.d_tau1_fd, self.scale1))
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else if a == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Evidence that a control insensitizes `Phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct InsensitizeCertificate {
    pub initial_norm: f64,
    /// Terminal cascade norms in the control case's state space.
    pub terminal: StateNorms,
    pub relative_terminal_y1: f64,
    pub relative_terminal_y2: f64,
    pub phi: f64,
    pub derivatives: Vec<DerivativeCheck>,
    pub fd_steps: (f64, f64),
    /// Order of the Richardson-extrapolated central difference.
    pub fd_order: u32,
    /// Pairs `(tau, Phi(tau) - Phi(0))` along the first perturbation.
    pub robustness: Vec<(f64, f64)>,
    pub exponent: f64,
    pub cg_iterations: usize,
}

impl InsensitizeCertificate {
    pub fn max_relative_derivative(&self) -> f64 {
        self.derivatives.iter().map(DerivativeCheck::relative_derivative).fold(0.0, f64::max)
    }

    pub fn max_fd_disagreement(&self) -> f64 {
        self.derivatives.iter().map(DerivativeCheck::fd_disagreement).fold(0.0, f64::max)
    }

    pub fn nulling_passes(&self) -> bool {
        self.relative_terminal_y1 <= NULLING_TOL && self.relative_terminal_y2 <= NULLING_TOL
    }

    /// The exponent is meaningless when `Phi` does not move at all.
    pub fn exponent_passes(&self) -> bool {
        self.robustness.iter().all(|(_, d)| *d == 0.0) || self.exponent >= MIN_EXPONENT
    }

    pub fn passes(&self) -> bool {
        self.nulling_passes()
            && self.derivatives.len() >= 10
            && self.max_relative_derivative() <= DERIVATIVE_TOL
            && self.max_fd_disagreement() <= FD_TOL
            && self.exponent_passes()
    }

    /// Plain-text summary.
    pub fn report(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("phi = {:.12e}\n", self.phi));
        s.push_str(&format!("initial_norm = {:.12e}\n", self.initial_norm));
        s.push_str(&format!("relative_terminal_y1 = {:.6e}\n", self.relative_terminal_y1));
        s.push_str(&format!("relative_terminal_y2 = {:.6e}\n", self.relative_terminal_y2));
        s.push_str(&format!("perturbations = {}\n", self.derivatives.len()));
        s.push_str(&format!("max_relative_derivative = {:.6e}\n", self.max_relative_derivative()));
        s.push_str(&format!(
            "fd_steps = {:e}, {:e} (central, Richardson order {})\n",
            self.fd_steps.0, self.fd_steps.1, self.fd_order
        ));
        s.push_str(&format!("max_fd_disagreement = {:.6e}\n", self.max_fd_disagreement()));
        s.push_str(&format!("robustness_exponent = {:.4}\n", self.exponent));
        s.push_str(&format!("cg_iterations = {}\n", self.cg_iterations));
        s.push_str(&format!("passes = {}\n", self.passes()));
        s
    }
}

fn relative_terminal(space: &Space, problem: &InsensitizeProblem, tr: &ControlledTrajectory) -> Result<(f64, StateNorms, f64, f64), InsensitizeError> {
    let case = problem.case();
    let init = state_norms(space, &problem.initial(None, None), case).total();
    // With zero data the source alone sets the scale.
    let free = problem.simulate(space, &[], None, None)?;
    let reference = init.max(state_norms(space, free.final_state(), case).total());
    let t = state_norms(space, tr.final_state(), case);
    let rel = |a: f64, b: f64| ratio((a * a + b * b).sqrt(), reference);
    Ok((reference, t, rel(t.y1, t.y1_velocity), rel(t.y2, t.y2_velocity)))
}

/// Certifies an arbitrary control (empty slice: `v = 0`).
pub fn certify(
    space: &Space,
    problem: &InsensitizeProblem,
    control: &[DVector<f64>],
    cg_iterations: usize,
) -> Result<InsensitizeCertificate, InsensitizeError> {
    problem.validate(space)?;
    let tr = problem.simulate(space, control, None, None)?;
    let (initial_norm, terminal, r1, r2) = relative_terminal(space, problem, &tr)?;
    let c = &problem.coupling.matrix;
    let phi0 = phi(&tr.refined_y2(), c, &problem.grid);
    let times = refined_times(&problem.grid);
    let wave_phi = |z: &ComponentState| {
        let w: Vec<DVector<f64>> = times.iter().map(|t| free_evolve(space, z, *t).u).collect();
        let r: Vec<&DVector<f64>> = w.iter().collect();
        phi(&r, c, &problem.grid)
    };
    let (h1, h2) = problem.fd_steps;
    let fd = |slot: usize, z: &DVector<f64>| -> Result<f64, InsensitizeError> {
        let central = |h: f64| -> Result<f64, InsensitizeError> {
            let (p, m) = if slot == 0 {
                (phi_of(space, problem, control, Some((z, h)), None)?, phi_of(space, problem, control, Some((z, -h)), None)?)
            } else {
                (phi_of(space, problem, control, None, Some((z, h)))?, phi_of(space, problem, control, None, Some((z, -h)))?)
            };
            Ok((p - m) / (2.0 * h))
        };
        let (a, b) = (central(h1)?, central(h2)?);
        let r = (h1 / h2).powi(2);
        Ok((r * b - a) / (r - 1.0))
    };
    let n = space.n_modes();
    let mut derivatives = Vec::new();
    for p in perturbation_pool(space, problem) {
        let (d0, d1) = derivatives_along(space, problem, &tr, &p.z0, &p.z1);
        let s0 = (2.0 * phi0).sqrt() * (2.0 * wave_phi(&ComponentState::new(p.z0.clone(), DVector::zeros(n)))).sqrt();
        let s1 = (2.0 * phi0).sqrt() * (2.0 * wave_phi(&ComponentState::new(DVector::zeros(n), p.z1.clone()))).sqrt();
        derivatives.push(DerivativeCheck {
            d_tau0_fd: fd(0, &p.z0)?,
            d_tau1_fd: fd(1, &p.z1)?,
            id: p.id,
            d_tau0: d0,
            d_tau1: d1,
            scale0: s0,
            scale1: s1,
        });
    }
    let pool = perturbation_pool(space, problem);
    let mut robustness = Vec::new();
    if let Some(p) = pool.first() {
        for &t in &problem.taus {
            let v = phi_of(space, problem, control, Some((&p.z0, t)), Some((&p.z1, t)))?;
            robustness.push((t, v - phi0));
        }
    }
    Ok(InsensitizeCertificate {
        initial_norm,
        terminal,
        relative_terminal_y1: r1,
        relative_terminal_y2: r2,
        phi: phi0,
        derivatives,
        fd_steps: problem.fd_steps,
        fd_order: 4,
        exponent: loglog_slope(&robustness),
        robustness,
        cg_iterations,
    })
}

/// Least-squares slope of `log|d|` against `log tau`; zero differences are skipped.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(_, d)| *d != 0.0).map(|(t, d)| (t.ln(), d.abs().ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Checks the geometric requirement on both the observation and control regions.
pub fn check_geometry(problem: &InsensitizeProblem) -> Result<(), InsensitizeError> {
    let t = problem.grid.horizon();
    let mut regions = Vec::new();
    if !problem.coupling.is_zero() {
        let (a, b) = problem.coupling.core;
        regions.push(Region::Interval(a, b));
    }
    if let Some(r) = problem.control.region() {
        regions.push(r);
    }
    for region in regions {
        let min_time = gcc_min_time(region).map_err(|e| InsensitizeError::Invalid(e.to_string()))?;
        if t <= min_time {
            return Err(InsensitizeError::Geometry { region, min_time, horizon: t });
        }
    }
    Ok(())
}

/// Builds an insensitizing control by HUM on the associated cascade and certifies it.
pub fn insensitize(space: &Space, problem: &InsensitizeProblem) -> Result<(Vec<DVector<f64>>, InsensitizeCertificate), InsensitizeError> {
    problem.validate(space)?;
    check_geometry(problem)?;
    let sol = solve_hum(space, &problem.hum_problem())?;
    let cert = certify(space, problem, &sol.control, sol.cg_iterations)?;
    Ok((sol.control, cert))
}

/// Outcome of the converse check.
#[derive(Debug, Clone, PartialEq)]
pub struct ConverseReport {
    /// `|(y1(T), y1'(T))|` relative to the data scale.
    pub terminal_residual: f64,
    /// Largest modal sensitivity derivative relative to its Cauchy-Schwarz scale.
    pub max_modal_derivative: f64,
    pub terminal_vanishes: bool,
    pub derivatives_vanish: bool,
}

impl ConverseReport {
    /// Both characterizations of insensitivity agree.
    pub fn consistent(&self) -> bool {
        self.terminal_vanishes == self.derivatives_vanish
    }
}

/// Reconstructs the cascade for `control` and compares the terminal test with
/// the derivatives along the full modal basis in each slot.
pub fn verify_converse(space: &Space, problem: &InsensitizeProblem, control: &[DVector<f64>]) -> Result<ConverseReport, InsensitizeError> {
    problem.validate(space)?;
    let tr = problem.simulate(space, control, None, None)?;
    let (_, _, r1, _) = relative_terminal(space, problem, &tr)?;
    let (d0, d1) = modal_derivatives(space, problem, &tr);
    let c = &problem.coupling.matrix;
    let phi0 = phi(&tr.refined_y2(), c, &problem.grid);
    let times = refined_times(&problem.grid);
    let om: Vec<f64> = space.eigenvalues().iter().map(|l| l.sqrt()).collect();
    let mut worst: f64 = 0.0;
    for j in 0..space.n_modes() {
        // 2 Phi of the free modal waves cos(w t) e_j and sin(w t)/w e_j.
        let pw0 = refined_simpson(&problem.grid, times.len(), |i| c[(j, j)] * (om[j] * times[i]).cos().powi(2));
        let pw1 = refined_simpson(&problem.grid, times.len(), |i| c[(j, j)] * ((om[j] * times[i]).sin() / om[j]).powi(2));
        worst = worst
            .max(ratio(d0[j].abs(), (2.0 * phi0).sqrt() * pw0.sqrt()))
            .max(ratio(d1[j].abs(), (2.0 * phi0).sqrt() * pw1.sqrt()));
    }
    Ok(ConverseReport {
        terminal_residual: r1,
        max_modal_derivative: worst,
        terminal_vanishes: r1 <= NULLING_TOL,
        derivatives_vanish: worst <= DERIVATIVE_TOL,
    })
}
