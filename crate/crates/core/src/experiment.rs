//! Experiment configurations and the batch runner behind the CLI.
//!
//! A configuration is a TOML document with `schema_version = 1`, an
//! experiment `kind` and per-kind sections. Every run produces CSV tables and
//! a list of named checks; the exit status is derived from the checks.

use crate::dynamics::{
    energy, evolve_cascade, CascadeState, CouplingOperator, Geometry, Observer, ObserverKind, ObserverSpec, Region,
    TimeGrid,
};
use crate::hum::{self, ControlCase, HumProblem};
use crate::insensitize::{self, InsensitizeProblem};
use crate::observability::{
    self, calibrate, empirical_horizon, gcc_min_time, gramian_report, min_eigenvalue, proof_chain_audit,
    theoretical_constants, ConstantInputs, EigenMethod, DEFAULT_C,
};
use crate::{sampling, Coefficient, Space};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Validation { line: Option<usize>, message: String },
    #[error("bad override `{0}`: expected dotted.key=value")]
    Override(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("writing {path}: {message}")]
    Output { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Simulate,
    Gramian,
    Sweep,
    Hum,
    Insensitize,
    Audit,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: Kind,
    #[serde(default)]
    pub seed: u64,
    pub spectral: SpectralSection,
    pub grid: GridSection,
    pub geometry: GeometrySection,
    #[serde(default)]
    pub constants: ConstantsSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub gramian: GramianSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub hum: HumSection,
    #[serde(default)]
    pub insensitize: InsensitizeSection,
    #[serde(default)]
    pub audit: AuditSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSection {
    pub n: usize,
    /// Truncations for refinement studies; defaults to `[n]`.
    #[serde(default)]
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub horizon: f64,
    /// Explicit step count; otherwise derived from `dt_omega`.
    pub n_steps: Option<usize>,
    #[serde(default = "default_dt_omega")]
    pub dt_omega: f64,
}

fn default_dt_omega() -> f64 {
    0.5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSection {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Zero height means no coupling; the plateau still fixes the core region.
    #[serde(default = "default_height")]
    pub height: f64,
}

fn default_margin() -> f64 {
    0.05
}

fn default_height() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum ObserverSection {
    Interior {
        lo: f64,
        hi: f64,
        #[serde(default = "default_margin")]
        margin: f64,
        #[serde(default = "default_height")]
        height: f64,
    },
    Boundary {
        #[serde(default)]
        left: f64,
        #[serde(default)]
        right: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub coupling: BumpSection,
    pub observer: ObserverSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSection {
    pub c: Option<[f64; 4]>,
    pub gamma0: Option<f64>,
    pub eta0: Option<f64>,
    pub alpha0: Option<f64>,
    pub t0: Option<f64>,
    /// Relative eigenvalue floor for observability claims.
    pub floor: Option<f64>,
    /// Tolerance for terminal nulling and identities.
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    #[default]
    Random,
    Zero,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default)]
    pub data: DataKind,
    /// Compare against the dense matrix exponential.
    #[serde(default)]
    pub oracle: bool,
    /// Step counts for the convergence-order check (successive halvings).
    #[serde(default)]
    pub order_steps: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    /// Report only.
    #[default]
    None,
    /// Uniformly positive minimum eigenvalue across levels.
    Observable,
    /// Minimum eigenvalue halves (or better) per doubling of `N`.
    Decay,
    /// First-component block degenerate (no coupling).
    Uncoupled,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    #[default]
    Dense,
    Factored,
    Lanczos,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GramianSection {
    #[serde(default)]
    pub method: MethodName,
    #[serde(default)]
    pub expect: Expectation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
pub enum Axis {
    #[default]
    T,
    N,
    #[serde(rename = "offset")]
    Offset,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub axis: Axis,
    #[serde(default)]
    pub values: Vec<f64>,
    /// Check the scaled-constant trends along a horizon sweep.
    #[serde(default)]
    pub check_trend: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumSection {
    #[serde(default)]
    pub data: DataKind,
    #[serde(default)]
    pub source: bool,
    pub cg_tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Also compare CG with a dense solve at this truncation.
    pub dense_check_n: Option<usize>,
    #[serde(default)]
    pub transposition_samples: usize,
    #[serde(default)]
    pub duality_samples: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsensitizeSection {
    #[serde(default)]
    pub data: DataKind,
    #[serde(default)]
    pub source: bool,
    /// Number of positive and of negative converse instances.
    #[serde(default)]
    pub converse_instances: usize,
    pub random_perturbations: Option<usize>,
    pub modal_perturbations: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    #[serde(default)]
    pub samples: usize,
    /// Run at this multiple of the empirical observability horizon instead of `grid.horizon`.
    pub horizon_factor: Option<f64>,
    /// Candidate horizons for the empirical horizon search.
    #[serde(default)]
    pub scan: Vec<f64>,
    /// Reproduce the closed forms of the constant chain at unit inputs.
    #[serde(default)]
    pub check_closed_forms: bool,
}

/// A parsed configuration with the source text kept for line anchors.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: String,
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map(|s| s.chars().count()).unwrap_or(0) + 1;
    (line, column)
}

/// Line of the first assignment to `key` (last dotted segment), if any.
fn key_line(src: &str, key: &str) -> Option<usize> {
    let leaf = key.rsplit('.').next().unwrap_or(key);
    src.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(leaf).map(|r| r.trim_start().starts_with('=')).unwrap_or(false)
    })
    .map(|i| i + 1)
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Parses a configuration, applying `key=value` overrides first.
pub fn parse_config(source: &str, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let text = if overrides.is_empty() {
        source.to_string()
    } else {
        let mut table: toml::Table = source.parse().map_err(|e: toml::de::Error| {
            let (line, column) = e.span().map(|s| line_col(source, s.start)).unwrap_or((0, 0));
            ConfigError::Parse { line, column, message: e.message().to_string() }
        })?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let keys: Vec<&str> = k.trim().split('.').collect();
            if keys.iter().any(|s| s.is_empty()) {
                return Err(ConfigError::Override(o.clone()));
            }
            let mut node = &mut table;
            for key in &keys[..keys.len() - 1] {
                node = node
                    .entry(key.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| ConfigError::Override(o.clone()))?;
            }
            node.insert(keys[keys.len() - 1].to_string(), parse_value(v.trim()));
        }
        toml::to_string(&table).map_err(|e| ConfigError::Override(e.to_string()))?
    };
    let config: ExperimentConfig = toml::from_str(&text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(&text, s.start)).unwrap_or((0, 0));
        ConfigError::Parse { line, column, message: e.message().to_string() }
    })?;
    let loaded = LoadedConfig { config, source: text };
    loaded.validate()?;
    Ok(loaded)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<LoadedConfig, ConfigError> {
    let source = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.to_path_buf(), source: e })?;
    parse_config(&source, overrides)
}

impl LoadedConfig {
    fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Validation { line: key_line(&self.source, key), message: message.into() }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        if c.schema_version != SCHEMA_VERSION {
            return Err(self.invalid("schema_version", format!("unsupported schema_version {}", c.schema_version)));
        }
        if c.spectral.n == 0 || c.spectral.levels.iter().any(|n| *n == 0) {
            return Err(self.invalid("n", "mode counts must be positive"));
        }
        if !(c.grid.horizon > 0.0) {
            return Err(self.invalid("horizon", "horizon must be positive"));
        }
        if !(c.grid.dt_omega > 0.0) {
            return Err(self.invalid("dt_omega", "dt_omega must be positive"));
        }
        if let Some(n) = c.grid.n_steps {
            if n == 0 || n % 2 == 1 {
                return Err(self.invalid("n_steps", "n_steps must be positive and even"));
            }
        }
        let b = &c.geometry.coupling;
        check_bump(b.lo, b.hi, b.margin).map_err(|m| self.invalid("lo", format!("coupling: {m}")))?;
        if !(b.height >= 0.0) {
            return Err(self.invalid("height", "coupling height must be nonnegative"));
        }
        match c.geometry.observer {
            ObserverSection::Interior { lo, hi, margin, height } => {
                check_bump(lo, hi, margin).map_err(|m| self.invalid("kind", format!("observer: {m}")))?;
                if !(height > 0.0) {
                    return Err(self.invalid("kind", "observer height must be positive"));
                }
            }
            ObserverSection::Boundary { left, right } => {
                if !(left >= 0.0 && right >= 0.0) || (left == 0.0 && right == 0.0) {
                    return Err(self.invalid("left", "boundary weights must be nonnegative and not both zero"));
                }
            }
        }
        if c.kind == Kind::Sweep && c.sweep.axis == Axis::N && c.sweep.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
            return Err(self.invalid("values", "N sweep values must be positive integers"));
        }
        if let Some(f) = c.audit.horizon_factor {
            if !(f > 0.0) || c.audit.scan.is_empty() {
                return Err(self.invalid("horizon_factor", "horizon_factor needs a positive value and a nonempty scan"));
            }
        }
        Ok(())
    }
}

fn check_bump(lo: f64, hi: f64, margin: f64) -> Result<(), String> {
    if !(margin >= 0.0) || !(lo < hi) || lo - margin < 0.0 || hi + margin > 1.0 {
        return Err(format!("region ({lo}, {hi}) with margin {margin} must lie inside (0, 1)"));
    }
    Ok(())
}

/// One named pass/fail check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.to_string(), passed, detail }
    }
}

/// A CSV table held in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

/// Fixed-width scientific formatting so reruns are byte-identical.
pub fn num(x: f64) -> String {
    format!("{x:.12e}")
}

/// Result of a run.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
    /// Plain-text reports, `(file name, contents)`.
    pub reports: Vec<(String, String)>,
    /// Refusal diagnostic when a module declined to run.
    pub refusal: Option<String>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.refusal.is_none() && self.checks.iter().all(|c| c.passed)
    }

    /// Writes all tables and reports under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
        let err = |path: &Path, e: std::io::Error| RunError::Output { path: path.to_path_buf(), message: e.to_string() };
        std::fs::create_dir_all(dir).map_err(|e| err(dir, e))?;
        let mut out = Vec::new();
        for t in &self.tables {
            let p = dir.join(format!("{}.csv", t.name));
            std::fs::write(&p, t.to_csv()).map_err(|e| err(&p, e))?;
            out.push(p);
        }
        for (name, text) in &self.reports {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| err(&p, e))?;
            out.push(p);
        }
        let p = dir.join("checks.csv");
        let mut t = Table::new("checks", &["check", "passed", "detail"]);
        for c in &self.checks {
            t.push(vec![c.name.clone(), c.passed.to_string(), c.detail.clone()]);
        }
        if let Some(r) = &self.refusal {
            t.push(vec!["refusal".into(), "false".into(), r.clone()]);
        }
        std::fs::write(&p, t.to_csv()).map_err(|e| err(&p, e))?;
        out.push(p);
        Ok(out)
    }
}

impl ExperimentConfig {
    pub fn geometry(&self) -> Result<Geometry, String> {
        self.geometry_with_offset(0.0)
    }

    fn geometry_with_offset(&self, shift: f64) -> Result<Geometry, String> {
        let b = &self.geometry.coupling;
        let coupling = if b.height > 0.0 {
            Some(Coefficient::plateau(b.lo, b.hi, b.margin, b.height).map_err(|e| e.to_string())?)
        } else {
            None
        };
        let observer = match self.geometry.observer {
            ObserverSection::Interior { lo, hi, margin, height } => {
                let (lo, hi) = (lo + shift, hi + shift);
                check_bump(lo, hi, margin)?;
                ObserverSpec::Interior {
                    weight: Coefficient::plateau(lo, hi, margin, height).map_err(|e| e.to_string())?,
                    region: Some((lo, hi)),
                }
            }
            ObserverSection::Boundary { left, right } => ObserverSpec::Boundary { left, right },
        };
        Ok(Geometry { coupling, core: (b.lo, b.hi), observer })
    }

    fn grid(&self, space: &Space, horizon: f64) -> Result<TimeGrid, String> {
        let g = match self.grid.n_steps {
            Some(n) => TimeGrid::new(horizon, n),
            None => TimeGrid::resolved(horizon, space, self.grid.dt_omega),
        };
        g.map_err(|e| e.to_string())
    }

    fn levels(&self) -> Vec<usize> {
        if self.spectral.levels.is_empty() {
            vec![self.spectral.n]
        } else {
            self.spectral.levels.clone()
        }
    }

    fn floor(&self) -> f64 {
        self.constants.floor.unwrap_or(1e-6)
    }

    fn tolerance(&self) -> f64 {
        self.constants.tolerance.unwrap_or(1e-6)
    }

    /// Largest geometric control time over the coupling core and the observer.
    pub fn gcc_time(&self) -> Result<f64, String> {
        let g = self.geometry()?;
        let core = gcc_min_time(Region::Interval(g.core.0, g.core.1)).map_err(|e| e.to_string())?;
        let obs = match g.observer.region() {
            Some(r) => gcc_min_time(r).map_err(|e| e.to_string())?,
            None => 0.0,
        };
        Ok(core.max(obs))
    }
}

/// Runs a loaded configuration. Module refusals are reported in the outcome.
pub fn run(cfg: &ExperimentConfig) -> RunOutcome {
    let result = match cfg.kind {
        Kind::Simulate => run_simulate(cfg),
        Kind::Gramian => run_gramian(cfg),
        Kind::Sweep => run_sweep(cfg),
        Kind::Hum => run_hum(cfg),
        Kind::Insensitize => run_insensitize(cfg),
        Kind::Audit => run_audit(cfg),
    };
    result.unwrap_or_else(|refusal| RunOutcome { refusal: Some(refusal), ..Default::default() })
}

type Step = Result<RunOutcome, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn setup(cfg: &ExperimentConfig, n: usize) -> Result<(Space, CouplingOperator, Observer), String> {
    let space = Space::new(n).map_err(err)?;
    let (c, o) = cfg.geometry()?.build(&space).map_err(err)?;
    Ok((space, c, o))
}

fn initial_data(kind: DataKind, n: usize, seed: u64) -> CascadeState {
    match kind {
        DataKind::Zero => CascadeState::zeros(n),
        DataKind::Random => sampling::random_cascade(n, &mut sampling::rng(seed)),
    }
}

fn dense_propagator(space: &Space, c: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
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
    (g * t).exp()
}

fn run_simulate(cfg: &ExperimentConfig) -> Step {
    let n = cfg.spectral.n;
    let (space, c, obs) = setup(cfg, n)?;
    let grid = cfg.grid(&space, cfg.grid.horizon)?;
    let u0 = initial_data(cfg.simulate.data, n, cfg.seed);
    let tr = evolve_cascade(&space, &u0, &c, &grid).map_err(err)?;
    let mut out = RunOutcome::default();
    let mut t = Table::new("energy", &["t", "e0_u1", "e1_u1", "e0_u2", "e1_u2", "observation"]);
    for (k, s) in tr.states.iter().enumerate() {
        let (a, b) = (s.component1(), s.component2());
        t.push(vec![
            num(grid.time(k)),
            num(energy(&space, &a, 0)),
            num(energy(&space, &a, 1)),
            num(energy(&space, &b, 0)),
            num(energy(&space, &b, 1)),
            num(obs.norm_sq(&b)),
        ]);
    }
    out.tables.push(t);
    for k in [1, 0] {
        let e0 = energy(&space, &u0.component1(), k);
        let drift = tr.states.iter().map(|s| (energy(&space, &s.component1(), k) - e0).abs()).fold(0.0, f64::max);
        let rel = if e0 > 0.0 { drift / e0 } else { drift };
        out.checks.push(Check::new(&format!("conservation_e{k}_u1"), rel <= 1e-12, format!("relative drift {rel:.3e}")));
    }
    let work = tr.integrate(|s| c.apply(&s.u1).dot(&s.v2));
    let de = energy(&space, &tr.final_state().component2(), 1) - energy(&space, &u0.component2(), 1);
    let scale = energy(&space, &u0.component2(), 1) + energy(&space, &u0.component1(), 1);
    let bal = if scale > 0.0 { (de + work).abs() / scale } else { (de + work).abs() };
    out.checks.push(Check::new("energy_balance", bal < 1e-6, format!("relative residual {bal:.3e}")));

    if cfg.simulate.oracle || !cfg.simulate.order_steps.is_empty() {
        let x0 = u0.to_vector();
        let mut tab = Table::new("oracle", &["n_steps", "final_error", "max_node_error"]);
        // Errors at 17 equispaced checkpoints; the final time alone can be superconvergent.
        let checkpoint_error = |g: &TimeGrid| -> Result<(f64, f64), String> {
            let tr = evolve_cascade(&space, &u0, &c, g).map_err(err)?;
            let stride = g.n_steps() / 16;
            let mut worst: f64 = 0.0;
            let mut fin = 0.0;
            for j in 0..=16 {
                let k = j * stride;
                let exact = dense_propagator(&space, &c.matrix, g.time(k)) * &x0;
                let e = (tr.states[k].to_vector() - &exact).norm() / exact.norm().max(f64::MIN_POSITIVE);
                worst = worst.max(e);
                if j == 16 {
                    fin = e;
                }
            }
            Ok((fin, worst))
        };
        if cfg.simulate.oracle {
            let exact = dense_propagator(&space, &c.matrix, grid.horizon()) * &x0;
            let e = (tr.final_state().to_vector() - &exact).norm() / exact.norm().max(f64::MIN_POSITIVE);
            out.checks.push(Check::new("oracle_final_state", e < 1e-6, format!("relative error {e:.3e}")));
        }
        let mut errs = Vec::new();
        for &s in &cfg.simulate.order_steps {
            if s % 16 != 0 {
                return Err(format!("order_steps entry {s} must be a multiple of 16"));
            }
            let g = TimeGrid::new(grid.horizon(), s).map_err(err)?.allowing_coarse();
            let (fin, worst) = checkpoint_error(&g)?;
            tab.push(vec![s.to_string(), num(fin), num(worst)]);
            errs.push(worst);
        }
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            out.checks.push(Check::new("order_ratio", (12.0..=20.0).contains(&r), format!("error ratio {r:.3}")));
        }
        out.tables.push(tab);
    }
    Ok(out)
}

fn method(cfg: &ExperimentConfig, n: usize) -> EigenMethod {
    match cfg.gramian.method {
        MethodName::Dense => EigenMethod::Dense,
        MethodName::Factored => EigenMethod::Factored,
        MethodName::Lanczos => EigenMethod::Lanczos { max_iter: (4 * n).min(400), tol: 1e-10 },
    }
}

struct Level {
    n: usize,
    min: f64,
    max: f64,
    floor: f64,
    below_floor: usize,
    u1_min: f64,
}

fn gramian_level(cfg: &ExperimentConfig, n: usize, horizon: f64, shift: f64) -> Result<(Level, Option<observability::GramianReport>), String> {
    let space = Space::new(n).map_err(err)?;
    let (c, obs) = cfg.geometry_with_offset(shift)?.build(&space).map_err(err)?;
    let grid = cfg.grid(&space, horizon)?;
    if cfg.gramian.method == MethodName::Dense && n <= observability::MAX_DENSE_MODES {
        let r = gramian_report(&space, &c, &obs, &grid).map_err(err)?;
        let l = Level { n, min: r.full.min, max: r.full.max, floor: r.floor(), below_floor: r.below_floor(), u1_min: r.u1_block.min };
        Ok((l, Some(r)))
    } else {
        let e = min_eigenvalue(&space, &c, &obs, &grid, 0, method(cfg, n)).map_err(err)?;
        let below = usize::from(!e.resolved());
        Ok((Level { n, min: e.min, max: e.max, floor: e.floor, below_floor: below, u1_min: f64::NAN }, None))
    }
}

fn level_row(l: &Level) -> Vec<String> {
    vec![
        l.n.to_string(),
        num(l.min),
        num(l.max),
        num(l.min / l.max),
        num(l.floor),
        l.below_floor.to_string(),
        num(l.u1_min),
    ]
}

const LEVEL_HEADER: [&str; 7] = ["n", "min_eig", "max_eig", "ratio", "floor", "below_floor", "min_eig_u1block"];

fn expectation_checks(expect: Expectation, levels: &[Level], floor: f64, out: &mut RunOutcome) {
    match expect {
        Expectation::None => {}
        Expectation::Observable => {
            for l in levels {
                out.checks.push(Check::new(
                    &format!("positive_n{}", l.n),
                    l.min > floor * l.max,
                    format!("min/max {:.3e} against {floor:.1e}", l.min / l.max),
                ));
            }
            let lo = levels.iter().map(|l| l.min).fold(f64::INFINITY, f64::min);
            let hi = levels.iter().map(|l| l.min).fold(0.0, f64::max);
            let var = if lo > 0.0 { hi / lo - 1.0 } else { f64::INFINITY };
            out.checks.push(Check::new("level_variation", var < 0.5, format!("spread {:.1}%", 100.0 * var)));
        }
        Expectation::Decay => {
            for w in levels.windows(2) {
                let resolved = w[0].min > w[0].floor && w[1].min > w[1].floor;
                let ratio = w[0].min / w[1].min;
                let detail = if resolved {
                    format!("ratio {ratio:.3}")
                } else {
                    format!(
                        "unresolved: min {:.3e} / {:.3e} against floors {:.3e} / {:.3e}; {} and {} directions below floor",
                        w[0].min, w[1].min, w[0].floor, w[1].floor, w[0].below_floor, w[1].below_floor
                    )
                };
                out.checks.push(Check::new(&format!("decay_n{}_to_n{}", w[0].n, w[1].n), resolved && ratio >= 2.0, detail));
            }
        }
        Expectation::Uncoupled => {
            for l in levels {
                out.checks.push(Check::new(
                    &format!("u1_block_degenerate_n{}", l.n),
                    l.u1_min <= 1e-10,
                    format!("u1 block min {:.3e}", l.u1_min),
                ));
            }
        }
    }
}

fn run_gramian(cfg: &ExperimentConfig) -> Step {
    let mut out = RunOutcome::default();
    let mut t = Table::new("gramian", &LEVEL_HEADER);
    let mut levels = Vec::new();
    for n in cfg.levels() {
        let (l, _) = gramian_level(cfg, n, cfg.grid.horizon, 0.0)?;
        t.push(level_row(&l));
        levels.push(l);
    }
    out.tables.push(t);
    expectation_checks(cfg.gramian.expect, &levels, cfg.floor(), &mut out);
    Ok(out)
}

fn run_sweep(cfg: &ExperimentConfig) -> Step {
    let mut out = RunOutcome::default();
    let mut header = vec!["axis_value"];
    header.extend_from_slice(&LEVEL_HEADER);
    header.extend_from_slice(&["horizon", "gcc_time", "d1", "d2", "k2", "r2", "d1_t3", "d2_t", "r2_t2"]);
    let mut t = Table::new("sweep", &header);
    let mut levels = Vec::new();
    let mut trends: Vec<[f64; 4]> = Vec::new();
    for &v in &cfg.sweep.values {
        let (n, horizon, shift) = match cfg.sweep.axis {
            Axis::T => (cfg.spectral.n, v, 0.0),
            Axis::N => (v as usize, cfg.grid.horizon, 0.0),
            Axis::Offset => (cfg.spectral.n, cfg.grid.horizon, v),
        };
        let gcc = {
            let g = cfg.geometry_with_offset(shift)?;
            g.observer.region().map(gcc_min_time).transpose().map_err(err)?.unwrap_or(0.0)
        };
        let (l, report) = gramian_level(cfg, n, horizon, shift)?;
        let mut row = vec![num(v)];
        row.extend(level_row(&l));
        row.push(num(horizon));
        row.push(num(gcc));
        match report {
            Some(r) => {
                let s = [r.d1 * horizon.powi(3), r.d2 * horizon, r.r2 * horizon * horizon, r.k2];
                row.extend([r.d1, r.d2, r.k2, r.r2, s[0], s[1], s[2]].iter().map(|x| num(*x)));
                trends.push(s);
            }
            None => row.extend((0..7).map(|_| num(f64::NAN))),
        }
        t.push(row);
        levels.push(l);
    }
    out.tables.push(t);
    if cfg.sweep.check_trend && !cfg.sweep.values.is_empty() {
        if trends.len() != cfg.sweep.values.len() {
            return Err("trend checks need dense reports at every sweep point".into());
        }
        for (i, name) in ["d1_t3", "d2_t", "r2_t2"].iter().enumerate() {
            let ok = trends.windows(2).all(|w| w[1][i] <= 2.0 * w[0][i]);
            let vals: Vec<String> = trends.iter().map(|s| format!("{:.4e}", s[i])).collect();
            out.checks.push(Check::new(&format!("trend_{name}"), ok, vals.join(" ")));
        }
        let lo = trends.iter().map(|s| s[3]).fold(f64::INFINITY, f64::min);
        let hi = trends.iter().map(|s| s[3]).fold(0.0, f64::max);
        out.checks.push(Check::new("trend_k2_bounded", hi <= 2.0 * lo, format!("k2 range {lo:.4e} .. {hi:.4e}")));
    }
    if cfg.sweep.axis == Axis::N {
        expectation_checks(cfg.gramian.expect, &levels, cfg.floor(), &mut out);
    }
    Ok(out)
}

fn hum_problem(cfg: &ExperimentConfig, n: usize) -> Result<(Space, HumProblem), String> {
    let (space, c, obs) = setup(cfg, n)?;
    let grid = cfg.grid(&space, cfg.grid.horizon)?;
    let case = match obs.kind() {
        ObserverKind::InteriorVelocity => ControlCase::Interior,
        ObserverKind::BoundaryNormalDerivative => ControlCase::Boundary,
    };
    let mut rng = sampling::rng(cfg.seed);
    let y0 = match cfg.hum.data {
        DataKind::Zero => CascadeState::zeros(n),
        DataKind::Random => sampling::random_cascade(n, &mut rng),
    };
    let mut p = HumProblem::new(case, y0, c, obs, grid);
    if cfg.hum.source {
        p.source = sampling::random_source(n, &grid.times(), &mut rng);
    }
    if let Some(t) = cfg.hum.cg_tolerance {
        p.cg_tolerance = t;
    }
    if let Some(m) = cfg.hum.max_iterations {
        p.max_iterations = m;
    }
    if let Some(f) = cfg.constants.floor {
        p.floor = f;
    }
    Ok((space, p))
}

fn run_hum(cfg: &ExperimentConfig) -> Step {
    let tol = cfg.tolerance();
    let (space, p) = hum_problem(cfg, cfg.spectral.n)?;
    let sol = hum::solve_hum(&space, &p).map_err(|e| format!("hum refused: {e}"))?;
    let mut out = RunOutcome::default();
    let times = p.grid.times();
    let mut ctrl = match p.case {
        ControlCase::Interior => Table::new("control", &["t", "x", "v"]),
        ControlCase::Boundary => Table::new("control", &["t", "v_left", "v_right"]),
    };
    for (k, v) in sol.control.iter().enumerate() {
        match p.case {
            ControlCase::Interior => {
                for (x, val) in p.observer.nodes().iter().zip(v.iter()) {
                    ctrl.push(vec![num(times[k]), num(*x), num(*val)]);
                }
            }
            ControlCase::Boundary => ctrl.push(vec![num(times[k]), num(v[0]), num(v[1])]),
        }
    }
    out.tables.push(ctrl);
    let mut cg = Table::new("cg_trace", &["iteration", "relative_residual"]);
    for (i, r) in sol.residual_history.iter().enumerate() {
        cg.push(vec![i.to_string(), num(*r)]);
    }
    out.tables.push(cg);
    let (a, b) = (sol.initial_norms, sol.terminal_norms);
    let mut manifest = String::new();
    manifest.push_str(&format!("case = {:?}\nn_modes = {}\nhorizon = {}\nn_steps = {}\n", p.case, space.n_modes(), p.grid.horizon(), p.grid.n_steps()));
    manifest.push_str(&format!("initial_norms = {:.12e} {:.12e} {:.12e} {:.12e}\n", a.y1, a.y2, a.y1_velocity, a.y2_velocity));
    manifest.push_str(&format!("terminal_norms = {:.12e} {:.12e} {:.12e} {:.12e}\n", b.y1, b.y2, b.y1_velocity, b.y2_velocity));
    manifest.push_str(&format!("relative_terminal = {:.6e}\n", sol.relative_terminal()));
    manifest.push_str(&format!("cg_iterations = {}\ncg_residual = {:.6e}\n", sol.cg_iterations, sol.final_residual));
    manifest.push_str(&format!("duality_residual = {:.6e}\n", sol.duality_residual));
    manifest.push_str(&format!("gramian_extremes = {:.6e} {:.6e}\n", sol.gramian_min, sol.gramian_max));
    manifest.push_str(&format!("control_norm = {:.12e}\n", sol.control_norm(&p)));
    out.reports.push(("manifest.txt".into(), manifest));
    out.checks.push(Check::new(
        "terminal_nulling",
        sol.relative_terminal() <= tol,
        format!("max terminal norm / initial norm {:.3e}", sol.relative_terminal()),
    ));
    let cap = cfg.hum.max_iterations.unwrap_or(500);
    out.checks.push(Check::new("cg_iterations", sol.cg_iterations < cap, format!("{} iterations, cap {cap}", sol.cg_iterations)));
    if let Some(nd) = cfg.hum.dense_check_n {
        let (sd, pd) = hum_problem(cfg, nd)?;
        let cgs = hum::solve_hum(&sd, &pd).map_err(|e| format!("hum refused at n={nd}: {e}"))?;
        let dense = hum::dense_hum_solve(&sd, &pd).map_err(err)?;
        let e = (cgs.wt.to_vector() - dense.to_vector()).norm() / dense.to_vector().norm().max(f64::MIN_POSITIVE);
        out.checks.push(Check::new("dense_agreement", e <= tol, format!("n={nd}: relative difference {e:.3e}")));
    }
    if cfg.hum.transposition_samples > 0 || cfg.hum.duality_samples > 0 {
        let mut t = Table::new("identities", &["identity", "sample", "relative_residual"]);
        if cfg.hum.transposition_samples > 0 {
            let k = cfg.hum.transposition_samples;
            let rep = hum::verify_transposition(&space, &sol.trajectory, &sol.control, &p, k, cfg.seed + 1).map_err(err)?;
            let mut rng = sampling::rng(cfg.seed + 2);
            let v: Vec<DVector<f64>> = (0..=p.grid.n_steps()).map(|_| sampling::gaussian(p.observer.channels(), &mut rng)).collect();
            let y0 = sampling::random_component(space.n_modes(), &mut rng);
            let sc = hum::verify_scalar_transposition(&space, &p.observer, &p.grid, &v, &y0, k, cfg.seed + 3).map_err(err)?;
            for (i, r) in rep.residuals.iter().enumerate() {
                t.push(vec!["cascade_transposition".into(), i.to_string(), num(*r)]);
            }
            for (i, r) in sc.residuals.iter().enumerate() {
                t.push(vec!["scalar_transposition".into(), i.to_string(), num(*r)]);
            }
            out.checks.push(Check::new("cascade_transposition", rep.max_relative < tol, format!("max {:.3e}", rep.max_relative)));
            out.checks.push(Check::new("scalar_transposition", sc.max_relative < tol, format!("max {:.3e}", sc.max_relative)));
        }
        if cfg.hum.duality_samples > 0 {
            let mut rng = sampling::rng(cfg.seed + 4);
            let mut worst: f64 = 0.0;
            for i in 0..cfg.hum.duality_samples {
                let u = sampling::random_cascade(space.n_modes(), &mut rng);
                let tr = evolve_cascade(&space, &u, &p.coupling, &p.grid).map_err(err)?;
                let lhs = tr.integrate(|s| p.coupling.apply(&s.u1).dot(&s.u1));
                let br = |s: &CascadeState| s.v1.dot(&s.u2) - s.v2.dot(&s.u1);
                let rhs = br(tr.final_state()) - br(&u);
                let r = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
                worst = worst.max(r);
                t.push(vec!["coupling_duality".into(), i.to_string(), num(r)]);
            }
            out.checks.push(Check::new("coupling_duality", worst < tol, format!("max {worst:.3e}")));
        }
        out.tables.push(t);
    }
    Ok(out)
}

fn insensitize_problem(cfg: &ExperimentConfig, seed: u64) -> Result<(Space, InsensitizeProblem), String> {
    let n = cfg.spectral.n;
    let (space, c, obs) = setup(cfg, n)?;
    let grid = cfg.grid(&space, cfg.grid.horizon)?;
    let mut rng = sampling::rng(seed);
    let d = match cfg.insensitize.data {
        DataKind::Zero => crate::dynamics::ComponentState::zeros(n),
        DataKind::Random => sampling::random_component(n, &mut rng),
    };
    let mut p = InsensitizeProblem::new(d.u, d.v, c, obs, grid);
    if cfg.insensitize.source {
        p.source = sampling::random_source(n, &grid.times(), &mut rng);
    }
    p.seed = seed;
    if let Some(k) = cfg.insensitize.random_perturbations {
        p.random_perturbations = k;
    }
    if let Some(k) = cfg.insensitize.modal_perturbations {
        p.modal_perturbations = k;
    }
    Ok((space, p))
}

fn run_insensitize(cfg: &ExperimentConfig) -> Step {
    let (space, p) = insensitize_problem(cfg, cfg.seed)?;
    let (_, cert) = insensitize::insensitize(&space, &p).map_err(|e| format!("insensitize refused: {e}"))?;
    let mut out = RunOutcome::default();
    let mut d = Table::new("derivatives", &["perturbation_id", "dphi_tau0_analytic", "dphi_tau0_fd", "dphi_tau1_analytic", "dphi_tau1_fd"]);
    for x in &cert.derivatives {
        d.push(vec![x.id.clone(), num(x.d_tau0), num(x.d_tau0_fd), num(x.d_tau1), num(x.d_tau1_fd)]);
    }
    out.tables.push(d);
    let mut r = Table::new("robustness", &["tau", "delta_phi"]);
    for (t, v) in &cert.robustness {
        r.push(vec![num(*t), num(*v)]);
    }
    out.tables.push(r);
    out.reports.push(("certificate.txt".into(), cert.report()));
    out.checks.push(Check::new(
        "terminal_nulling",
        cert.nulling_passes(),
        format!("y1 {:.3e}, y2 {:.3e}", cert.relative_terminal_y1, cert.relative_terminal_y2),
    ));
    out.checks.push(Check::new(
        "derivatives_vanish",
        cert.derivatives.len() >= 10 && cert.max_relative_derivative() <= insensitize::DERIVATIVE_TOL,
        format!("{} perturbations, max relative {:.3e}", cert.derivatives.len(), cert.max_relative_derivative()),
    ));
    out.checks.push(Check::new(
        "finite_difference_agreement",
        cert.max_fd_disagreement() <= insensitize::FD_TOL,
        format!("max relative gap {:.3e}", cert.max_fd_disagreement()),
    ));
    out.checks.push(Check::new("robustness_exponent", cert.exponent_passes(), format!("exponent {:.4}", cert.exponent)));
    if cfg.insensitize.converse_instances > 0 {
        let mut t = Table::new("converse", &["instance", "control", "terminal_residual", "max_modal_derivative", "terminal_vanishes", "derivatives_vanish"]);
        let (mut agree, mut neg_ok) = (true, true);
        for i in 0..cfg.insensitize.converse_instances {
            let (space, p) = insensitize_problem(cfg, cfg.seed + 100 + i as u64)?;
            let (v, _) = insensitize::insensitize(&space, &p).map_err(|e| format!("insensitize refused: {e}"))?;
            for (label, ctrl) in [("insensitizing", v.as_slice()), ("zero", &[][..])] {
                let r = insensitize::verify_converse(&space, &p, ctrl).map_err(err)?;
                agree &= r.consistent();
                if label == "insensitizing" {
                    agree &= r.terminal_vanishes;
                } else {
                    neg_ok &= !r.terminal_vanishes && r.terminal_residual > 1e-3;
                }
                t.push(vec![
                    i.to_string(),
                    label.into(),
                    num(r.terminal_residual),
                    num(r.max_modal_derivative),
                    r.terminal_vanishes.to_string(),
                    r.derivatives_vanish.to_string(),
                ]);
            }
        }
        out.tables.push(t);
        out.checks.push(Check::new("converse_agreement", agree, "forward and converse characterizations".into()));
        out.checks.push(Check::new("converse_negatives", neg_ok, "zero control leaves residual above 1e-3".into()));
    }
    Ok(out)
}

/// Closed forms of the constant chain at unit inputs, computed independently.
pub fn closed_form_reference() -> (f64, f64, f64, f64) {
    let (a, b) = (16.0f64, 64.0f64);
    let s = (a * a + a + b).sqrt();
    let m = s / ((2.0 * a + 1.0) * (a + s) + a + 2.0 * b);
    (a, b, m, 16.0)
}

fn run_audit(cfg: &ExperimentConfig) -> Step {
    let mut out = RunOutcome::default();
    let c = cfg.constants.c.unwrap_or(DEFAULT_C);
    if cfg.audit.check_closed_forms {
        let k = theoretical_constants(ConstantInputs { alpha: 1.0, beta: 1.0, gamma0: 1.0, eta0: 1.0, alpha0: 1.0, t0: 0.0, c: DEFAULT_C })
            .map_err(err)?;
        let (a, b, m, t1) = closed_form_reference();
        let rel = |x: f64, y: f64| (x - y).abs() / y.abs();
        let worst = rel(k.a, a).max(rel(k.b, b)).max(rel(k.m, m)).max(rel(k.t1, t1));
        out.checks.push(Check::new(
            "closed_forms",
            worst <= 1e-12,
            format!("a={} b={} M={:.6} T1={} (max relative deviation {worst:.1e})", k.a, k.b, k.m, k.t1),
        ));
    }
    let n = cfg.spectral.n;
    let geometry = cfg.geometry()?;
    let horizon = match cfg.audit.horizon_factor {
        Some(f) => {
            let th = empirical_horizon(&geometry, n, &cfg.audit.scan, cfg.grid.dt_omega, cfg.floor()).map_err(err)?;
            let th = th.ok_or_else(|| "no observable horizon in the scan".to_string())?;
            out.reports.push(("horizon.txt".into(), format!("empirical_horizon = {th}\naudit_horizon = {}\n", f * th)));
            f * th
        }
        None => cfg.grid.horizon,
    };
    let (space, coupling, obs) = setup(cfg, n)?;
    let grid = cfg.grid(&space, horizon)?;
    let cal = calibrate(&space, &coupling, &obs, &grid).map_err(err)?;
    let inputs = ConstantInputs {
        alpha: coupling.alpha.max(f64::MIN_POSITIVE),
        beta: coupling.beta.max(f64::MIN_POSITIVE),
        gamma0: cfg.constants.gamma0.unwrap_or(cal.gamma0),
        eta0: cfg.constants.eta0.unwrap_or(cal.eta0),
        alpha0: cfg.constants.alpha0.unwrap_or(cal.alpha0).max(f64::MIN_POSITIVE),
        t0: match cfg.constants.t0 {
            Some(t) => t,
            None => cfg.gcc_time()?,
        },
        c,
    };
    let k = theoretical_constants(inputs).map_err(err)?;
    let mut ct = Table::new("constants", &["name", "value"]);
    for (name, v) in [
        ("horizon", horizon),
        ("alpha", k.alpha),
        ("beta", k.beta),
        ("gamma0", k.gamma0),
        ("eta0", k.eta0),
        ("alpha0", k.alpha0),
        ("a", k.a),
        ("b", k.b),
        ("nu", k.nu),
        ("m", k.m),
        ("t0", k.t0),
        ("t1", k.t1),
        ("t2", k.t2),
        ("t3", k.t3),
    ] {
        ct.push(vec![name.into(), num(v)]);
    }
    out.tables.push(ct);
    let mut t = Table::new("audit", &["sample", "entry", "lhs", "rhs", "margin", "must_hold", "satisfied"]);
    let mut rng = sampling::rng(cfg.seed);
    let (mut failures, mut checked) = (0usize, 0usize);
    for i in 0..cfg.audit.samples {
        let u = sampling::random_cascade(n, &mut rng);
        for e in proof_chain_audit(&space, &u, &coupling, &obs, &k, &grid).map_err(err)? {
            if e.must_hold {
                checked += 1;
                failures += usize::from(!e.satisfied());
            }
            t.push(vec![
                i.to_string(),
                e.name.into(),
                num(e.lhs),
                num(e.rhs),
                num(e.margin),
                e.must_hold.to_string(),
                e.satisfied().to_string(),
            ]);
        }
    }
    out.tables.push(t);
    if cfg.audit.samples > 0 {
        out.checks.push(Check::new(
            "must_hold_entries",
            failures == 0,
            format!("{failures} of {checked} must-hold entries violated at T={horizon}"),
        ));
    }
    Ok(out)
}
