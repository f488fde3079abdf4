//! Scalar fields on the unit interval expanded in the Dirichlet sine basis.
//!
//! Mode `k` (1-based) is `phi_k(x) = sqrt(2) sin(k pi x)` with eigenvalue
//! `lambda_k = (k pi)^2`. Everything in this module is generic over the
//! floating point type; the rest of the crate works in `f64`.

use nalgebra::DMatrix;
use num_traits::{Float, FromPrimitive};
use thiserror::Error;

/// Floating point type usable by the spectral layer.
pub trait Scalar: Float + FromPrimitive + nalgebra::Scalar + Send + Sync {}

impl<T> Scalar for T where T: Float + FromPrimitive + nalgebra::Scalar + Send + Sync {}

#[inline]
fn lit<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("literal representable in scalar type")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("quadrature uses {panels} panels but at least {required} are required")]
    Resolution { panels: usize, required: usize },
    #[error("Simpson quadrature needs an even panel count, got {0}")]
    OddPanels(usize),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid coefficient piece: {0}")]
    InvalidPiece(String),
    #[error("number of modes must be positive")]
    NoModes,
}

/// Composite rule applied on each panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Simpson,
    GaussLegendre(usize),
}

/// Quadrature descriptor: panel count on `[0, 1]` and the per-panel rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureSpec {
    pub panels: usize,
    pub rule: Rule,
}

/// Points per panel of the breakpoint-aligned rule used for coefficient functions.
pub const FITTED_POINTS: usize = 5;

/// Nodes and weights of a quadrature rule on a subset of `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Quadrature<S> {
    pub nodes: Vec<S>,
    pub weights: Vec<S>,
}

impl<S: Scalar> Quadrature<S> {
    /// Composite Simpson rule with `panels` uniform subintervals (must be even).
    pub fn simpson(panels: usize) -> Result<Self, SpectralError> {
        if panels == 0 || panels % 2 == 1 {
            return Err(SpectralError::OddPanels(panels));
        }
        let h = 1.0 / panels as f64;
        let mut nodes = Vec::with_capacity(panels + 1);
        let mut weights = Vec::with_capacity(panels + 1);
        for i in 0..=panels {
            nodes.push(lit(i as f64 * h));
            let w = if i == 0 || i == panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            weights.push(lit(w * h / 3.0));
        }
        Ok(Self { nodes, weights })
    }

    /// Composite Gauss-Legendre rule whose panels never straddle a breakpoint.
    ///
    /// Each interval between consecutive breakpoints is split into
    /// `ceil(len * panels_per_unit)` equal panels carrying `points` nodes each.
    pub fn fitted(breaks: &[S], panels_per_unit: usize, points: usize) -> Self {
        Self::fitted_on(S::zero(), S::one(), breaks, panels_per_unit, points)
    }

    /// As [`Quadrature::fitted`] restricted to `[lo, hi]`.
    pub fn fitted_on(lo: S, hi: S, breaks: &[S], panels_per_unit: usize, points: usize) -> Self {
        let mut cuts: Vec<f64> = vec![lo.to_f64().unwrap(), hi.to_f64().unwrap()];
        for b in breaks {
            let b = b.to_f64().unwrap();
            if b > cuts[0] && b < cuts[1] {
                cuts.push(b);
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        let (gx, gw) = gauss_legendre(points);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let len = b - a;
            if len <= 0.0 {
                continue;
            }
            let panels = ((len * panels_per_unit as f64).ceil() as usize).max(1);
            let h = len / panels as f64;
            for p in 0..panels {
                let mid = a + (p as f64 + 0.5) * h;
                for (x, w) in gx.iter().zip(&gw) {
                    nodes.push(lit(mid + 0.5 * h * x));
                    weights.push(lit(0.5 * h * w));
                }
            }
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: Fn(S) -> S>(&self, f: F) -> S {
        self.nodes
            .iter()
            .zip(&self.weights)
            .fold(S::zero(), |acc, (&x, &w)| acc + w * f(x))
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        xs[i] = -x;
        xs[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}

/// Coefficients of a field against the first `n` sine modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalCoefficients<S> {
    coeffs: Vec<S>,
}

impl<S: Scalar> ModalCoefficients<S> {
    pub fn new(coeffs: Vec<S>) -> Result<Self, SpectralError> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(SpectralError::NonFinite(i));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(n: usize) -> Self {
        Self { coeffs: vec![S::zero(); n] }
    }

    /// The coefficient vector of `phi_mode` (1-based).
    pub fn unit(n: usize, mode: usize) -> Self {
        let mut coeffs = vec![S::zero(); n];
        coeffs[mode - 1] = S::one();
        Self { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.coeffs
    }

    pub fn into_vec(self) -> Vec<S> {
        self.coeffs
    }

    pub fn dot(&self, other: &Self) -> S {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .fold(S::zero(), |a, (&x, &y)| a + x * y)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| a + b).collect(),
        }
    }

    pub fn scale(&self, s: S) -> Self {
        Self { coeffs: self.coeffs.iter().map(|&a| a * s).collect() }
    }
}

impl<S: Scalar> std::ops::Index<usize> for ModalCoefficients<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.coeffs[i]
    }
}

/// One primitive of a coefficient function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece<S> {
    /// `height` on `[lo, hi]`, cubic smoothstep ramps of width `margin` on both sides.
    Plateau { lo: S, hi: S, margin: S, height: S },
    /// Sharp indicator of `[lo, hi]`; not Lipschitz.
    Indicator { lo: S, hi: S, height: S },
    /// Constant on the whole interval.
    Constant(S),
}

impl<S: Scalar> Piece<S> {
    fn eval(&self, x: S) -> S {
        match *self {
            Piece::Plateau { lo, hi, margin, height } => {
                if x >= lo && x <= hi {
                    height
                } else if x < lo && x > lo - margin {
                    height * smoothstep((x - (lo - margin)) / margin)
                } else if x > hi && x < hi + margin {
                    height * smoothstep((hi + margin - x) / margin)
                } else {
                    S::zero()
                }
            }
            Piece::Indicator { lo, hi, height } => {
                if x >= lo && x <= hi {
                    height
                } else {
                    S::zero()
                }
            }
            Piece::Constant(h) => h,
        }
    }

    fn breakpoints(&self) -> Vec<S> {
        match *self {
            Piece::Plateau { lo, hi, margin, .. } => vec![lo - margin, lo, hi, hi + margin],
            Piece::Indicator { lo, hi, .. } => vec![lo, hi],
            Piece::Constant(_) => vec![],
        }
    }

    fn support(&self) -> (S, S) {
        match *self {
            Piece::Plateau { lo, hi, margin, .. } => (lo - margin, hi + margin),
            Piece::Indicator { lo, hi, .. } => (lo, hi),
            Piece::Constant(_) => (S::zero(), S::one()),
        }
    }

    fn height(&self) -> S {
        match *self {
            Piece::Plateau { height, .. } | Piece::Indicator { height, .. } => height,
            Piece::Constant(h) => h,
        }
    }
}

fn smoothstep<S: Scalar>(t: S) -> S {
    t * t * (lit::<S>(3.0) - lit::<S>(2.0) * t)
}

/// Nonnegative weight built as a sum of plateau bumps, indicators and constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFunction<S> {
    pieces: Vec<Piece<S>>,
    core: Option<(S, S)>,
}

impl<S: Scalar> CoefficientFunction<S> {
    pub fn zero() -> Self {
        Self { pieces: Vec::new(), core: None }
    }

    pub fn constant(height: S) -> Result<Self, SpectralError> {
        Self::from_pieces(vec![Piece::Constant(height)])
    }

    /// Single plateau bump whose core region is its plateau.
    pub fn plateau(lo: S, hi: S, margin: S, height: S) -> Result<Self, SpectralError> {
        Ok(Self::from_pieces(vec![Piece::Plateau { lo, hi, margin, height }])?.with_core(lo, hi))
    }

    /// Sharp indicator of `[lo, hi]`, core region `[lo, hi]`.
    pub fn indicator(lo: S, hi: S) -> Result<Self, SpectralError> {
        Ok(Self::from_pieces(vec![Piece::Indicator { lo, hi, height: S::one() }])?.with_core(lo, hi))
    }

    pub fn from_pieces(pieces: Vec<Piece<S>>) -> Result<Self, SpectralError> {
        for p in &pieces {
            validate_piece(p)?;
        }
        Ok(Self { pieces, core: None })
    }

    pub fn with_core(mut self, lo: S, hi: S) -> Self {
        self.core = Some((lo, hi));
        self
    }

    pub fn pieces(&self) -> &[Piece<S>] {
        &self.pieces
    }

    pub fn core(&self) -> Option<(S, S)> {
        self.core
    }

    pub fn eval(&self, x: S) -> S {
        self.pieces.iter().fold(S::zero(), |a, p| a + p.eval(x))
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(|p| p.height() == S::zero())
    }

    /// False when an indicator piece makes the function discontinuous.
    pub fn is_lipschitz(&self) -> bool {
        !self.pieces.iter().any(|p| matches!(p, Piece::Indicator { .. }))
    }

    /// Points in `(0, 1)` where the function is not smooth.
    pub fn breakpoints(&self) -> Vec<S> {
        let mut b: Vec<S> = self
            .pieces
            .iter()
            .flat_map(|p| p.breakpoints())
            .filter(|&x| x > S::zero() && x < S::one())
            .collect();
        b.sort_by(|a, c| a.partial_cmp(c).unwrap());
        b.dedup();
        b
    }

    /// Closed support intervals clipped to `[0, 1]` (pieces may overlap).
    pub fn support(&self) -> Vec<(S, S)> {
        self.pieces
            .iter()
            .filter(|p| p.height() > S::zero())
            .map(|p| {
                let (a, b) = p.support();
                (a.max(S::zero()), b.min(S::one()))
            })
            .filter(|(a, b)| a <= b)
            .collect()
    }

    pub fn sup_norm(&self) -> S {
        self.extremum(S::zero(), S::one(), true)
    }

    /// Infimum over the closed interval `[lo, hi]`.
    pub fn infimum_on(&self, lo: S, hi: S) -> S {
        self.extremum(lo, hi, false)
    }

    /// Infimum over the declared core region, if any.
    pub fn core_infimum(&self) -> Option<S> {
        self.core.map(|(a, b)| self.infimum_on(a, b))
    }

    fn extremum(&self, lo: S, hi: S, max: bool) -> S {
        let samples = 4096;
        let mut xs: Vec<S> = (0..=samples)
            .map(|i| lo + (hi - lo) * lit::<S>(i as f64 / samples as f64))
            .collect();
        xs.extend(self.breakpoints().into_iter().filter(|&x| x >= lo && x <= hi));
        let vals = xs.into_iter().map(|x| self.eval(x));
        if max {
            vals.fold(S::zero(), S::max)
        } else {
            vals.fold(S::infinity(), S::min)
        }
    }

    /// Pointwise square, kept as a closure-friendly helper.
    pub fn squared_at(&self, x: S) -> S {
        let v = self.eval(x);
        v * v
    }
}

fn validate_piece<S: Scalar>(p: &Piece<S>) -> Result<(), SpectralError> {
    let bad = |m: &str| Err(SpectralError::InvalidPiece(m.to_string()));
    match *p {
        Piece::Plateau { lo, hi, margin, height } => {
            if !(lo.is_finite() && hi.is_finite() && margin.is_finite() && height.is_finite()) {
                return bad("non-finite plateau parameter");
            }
            if lo > hi {
                return bad("plateau_lo exceeds plateau_hi");
            }
            if margin <= S::zero() {
                return bad("plateau margin must be positive");
            }
            if height < S::zero() {
                return bad("height must be nonnegative");
            }
        }
        Piece::Indicator { lo, hi, height } => {
            if lo > hi || height < S::zero() || !height.is_finite() {
                return bad("indicator needs lo <= hi and nonnegative height");
            }
        }
        Piece::Constant(h) => {
            if h < S::zero() || !h.is_finite() {
                return bad("constant must be finite and nonnegative");
            }
        }
    }
    Ok(())
}

/// Truncated sine basis together with its sampling quadrature.
#[derive(Debug, Clone)]
pub struct SpectralSpace<S> {
    n_modes: usize,
    eigenvalues: Vec<S>,
    spec: QuadratureSpec,
    grid: Quadrature<S>,
    /// `basis[k * grid.len() + i] = phi_{k+1}(x_i)`.
    basis: Vec<S>,
}

impl<S: Scalar> SpectralSpace<S> {
    /// `n` modes, composite Simpson with `8n` panels.
    pub fn new(n: usize) -> Result<Self, SpectralError> {
        Self::with_quadrature(n, QuadratureSpec { panels: 8 * n, rule: Rule::Simpson })
    }

    pub fn with_quadrature(n: usize, spec: QuadratureSpec) -> Result<Self, SpectralError> {
        if n == 0 {
            return Err(SpectralError::NoModes);
        }
        if spec.panels < 8 * n {
            return Err(SpectralError::Resolution { panels: spec.panels, required: 8 * n });
        }
        let grid = match spec.rule {
            Rule::Simpson => Quadrature::simpson(spec.panels)?,
            Rule::GaussLegendre(p) => Quadrature::fitted(&[], spec.panels, p),
        };
        let pi = lit::<S>(std::f64::consts::PI);
        let eigenvalues = (1..=n).map(|k| (lit::<S>(k as f64) * pi).powi(2)).collect();
        let mut basis = Vec::with_capacity(n * grid.len());
        for k in 1..=n {
            basis.extend(grid.nodes.iter().map(|&x| eigenfunction(k, x)));
        }
        Ok(Self { n_modes: n, eigenvalues, spec, grid, basis })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn eigenvalues(&self) -> &[S] {
        &self.eigenvalues
    }

    /// Largest retained eigenvalue `lambda_N`.
    pub fn max_eigenvalue(&self) -> S {
        self.eigenvalues[self.n_modes - 1]
    }

    pub fn quadrature_spec(&self) -> QuadratureSpec {
        self.spec
    }

    pub fn grid(&self) -> &Quadrature<S> {
        &self.grid
    }

    /// Breakpoint-aligned rule at the space's panel density.
    pub fn fitted_rule(&self, breaks: &[S]) -> Quadrature<S> {
        Quadrature::fitted(breaks, self.spec.panels, FITTED_POINTS)
    }

    /// Values `phi_1(x), ..., phi_N(x)`.
    pub fn basis_at(&self, x: S) -> Vec<S> {
        (1..=self.n_modes).map(|k| eigenfunction(k, x)).collect()
    }

    pub fn evaluate(&self, u: &ModalCoefficients<S>, x: S) -> S {
        u.as_slice()
            .iter()
            .enumerate()
            .fold(S::zero(), |a, (k, &c)| a + c * eigenfunction(k + 1, x))
    }

    /// Values of `u` on the sampling grid.
    pub fn sample(&self, u: &ModalCoefficients<S>) -> Vec<S> {
        let m = self.grid.len();
        let mut out = vec![S::zero(); m];
        for (k, &c) in u.as_slice().iter().enumerate() {
            let row = &self.basis[k * m..(k + 1) * m];
            for (o, &b) in out.iter_mut().zip(row) {
                *o = *o + c * b;
            }
        }
        out
    }

    /// Coefficients of a field given by its samples on the sampling grid.
    pub fn project_samples(&self, samples: &[S]) -> Result<ModalCoefficients<S>, SpectralError> {
        let m = self.grid.len();
        if samples.len() != m {
            return Err(SpectralError::Length { expected: m, got: samples.len() });
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SpectralError::NonFinite(i));
        }
        let coeffs = (0..self.n_modes)
            .map(|k| {
                let row = &self.basis[k * m..(k + 1) * m];
                row.iter()
                    .zip(samples)
                    .zip(&self.grid.weights)
                    .fold(S::zero(), |a, ((&b, &f), &w)| a + w * b * f)
            })
            .collect();
        Ok(ModalCoefficients { coeffs })
    }

    /// Coefficients of `f` sampled on the sampling grid.
    pub fn project_fn<F: Fn(S) -> S>(&self, f: F) -> Result<ModalCoefficients<S>, SpectralError> {
        let samples: Vec<S> = self.grid.nodes.iter().map(|&x| f(x)).collect();
        self.project_samples(&samples)
    }

    /// Coefficients of a coefficient function, integrated piecewise between its breakpoints.
    pub fn project(&self, f: &CoefficientFunction<S>) -> ModalCoefficients<S> {
        let q = self.fitted_rule(&f.breakpoints());
        let coeffs = (1..=self.n_modes)
            .map(|k| q.integrate(|x| f.eval(x) * eigenfunction(k, x)))
            .collect();
        ModalCoefficients { coeffs }
    }

    /// Scales coefficient `j` by `lambda_j^s`.
    pub fn apply_fractional_power(&self, u: &ModalCoefficients<S>, s: S) -> ModalCoefficients<S> {
        let coeffs = u
            .as_slice()
            .iter()
            .zip(&self.eigenvalues)
            .map(|(&c, &l)| c * l.powf(s))
            .collect();
        ModalCoefficients { coeffs }
    }

    /// `|u|_k = sqrt(sum_j lambda_j^k c_j^2)`.
    pub fn sobolev_norm(&self, u: &ModalCoefficients<S>, k: i32) -> S {
        u.as_slice()
            .iter()
            .zip(&self.eigenvalues)
            .fold(S::zero(), |a, (&c, &l)| a + l.powi(k) * c * c)
            .sqrt()
    }

    /// Matrix of multiplication by `f`: `C_jk = int f phi_j phi_k`.
    pub fn assemble_multiplication_matrix(&self, f: &CoefficientFunction<S>) -> DMatrix<S> {
        self.weighted_gram(|x| f.eval(x), &f.breakpoints())
    }

    /// `int w phi_j phi_k` for an arbitrary weight smooth between `breaks`.
    pub fn weighted_gram<F: Fn(S) -> S>(&self, w: F, breaks: &[S]) -> DMatrix<S> {
        let q = self.fitted_rule(breaks);
        let n = self.n_modes;
        let vals: Vec<S> = q.nodes.iter().zip(&q.weights).map(|(&x, &wt)| wt * w(x)).collect();
        let phis: Vec<Vec<S>> = (1..=n)
            .map(|k| q.nodes.iter().map(|&x| eigenfunction(k, x)).collect())
            .collect();
        let mut m = DMatrix::from_element(n, n, S::zero());
        for j in 0..n {
            for k in j..n {
                let v = phis[j]
                    .iter()
                    .zip(&phis[k])
                    .zip(&vals)
                    .fold(S::zero(), |a, ((&p, &r), &w)| a + p * r * w);
                m[(j, k)] = v;
                m[(k, j)] = v;
            }
        }
        m
    }
}

/// `sqrt(2) sin(k pi x)`.
pub fn eigenfunction<S: Scalar>(k: usize, x: S) -> S {
    let pi = lit::<S>(std::f64::consts::PI);
    lit::<S>(std::f64::consts::SQRT_2) * (lit::<S>(k as f64) * pi * x).sin()
}

/// Derivative of [`eigenfunction`] in `x`.
pub fn eigenfunction_derivative<S: Scalar>(k: usize, x: S) -> S {
    let pi = lit::<S>(std::f64::consts::PI);
    let kp = lit::<S>(k as f64) * pi;
    lit::<S>(std::f64::consts::SQRT_2) * kp * (kp * x).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s - 2.0 / 9.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn simpson_rejects_odd_panels() {
        assert!(Quadrature::<f64>::simpson(7).is_err());
    }

    #[test]
    fn resolution_guard() {
        let spec = QuadratureSpec { panels: 10, rule: Rule::Simpson };
        assert!(SpectralSpace::<f64>::with_quadrature(4, spec).is_err());
    }

    #[test]
    fn single_precision_space_works() {
        let sp = SpectralSpace::<f32>::new(4).unwrap();
        let u = ModalCoefficients::unit(4, 1);
        assert!((sp.sobolev_norm(&u, 1) - std::f32::consts::PI).abs() < 1e-5);
    }

    #[test]
    fn plateau_shape() {
        let f = CoefficientFunction::plateau(0.2, 0.3, 0.05, 2.0).unwrap();
        assert_eq!(f.eval(0.25), 2.0);
        assert_eq!(f.eval(0.1), 0.0);
        assert!((f.eval(0.175) - 1.0).abs() < 1e-12);
        assert!(f.is_lipschitz());
        assert_eq!(f.core_infimum(), Some(2.0));
        assert!(!CoefficientFunction::<f64>::indicator(0.2, 0.3).unwrap().is_lipschitz());
        assert!(CoefficientFunction::plateau(0.3, 0.2, 0.05, 1.0).is_err());
        assert!(CoefficientFunction::plateau(0.2, 0.3, 0.05, -1.0).is_err());
    }
}
