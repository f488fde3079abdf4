//! Spectral simulation, observability and control of a two-component
//! hyperbolic cascade on the unit interval with Dirichlet conditions.

pub mod dynamics;
pub mod experiment;
pub mod hum;
pub mod insensitize;
pub mod linalg;
pub mod observability;
pub mod sampling;
pub mod spectral;

/// Modal space used throughout the dynamics and control modules.
pub type Space = spectral::SpectralSpace<f64>;
/// Real coefficient function.
pub type Coefficient = spectral::CoefficientFunction<f64>;
/// Modal coefficient vector.
pub type Modal = spectral::ModalCoefficients<f64>;
