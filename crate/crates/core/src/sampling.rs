//! Seeded random data for ensembles and tests.

use crate::dynamics::{CascadeState, ComponentState};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rng64 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian modal vector with coefficient `j` scaled by `j^-decay`.
pub fn random_modal<R: Rng>(n: usize, decay: f64, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |i, _| {
        let z: f64 = rng.sample(StandardNormal);
        z / ((i + 1) as f64).powf(decay)
    })
}

/// Positions decay like `j^-2`, velocities like `j^-1`, so the data sit in `H_1 x H`.
pub fn random_component<R: Rng>(n: usize, rng: &mut R) -> ComponentState {
    let u = random_modal(n, 2.0, rng);
    let v = random_modal(n, 1.0, rng);
    ComponentState::new(u, v)
}

pub fn random_cascade<R: Rng>(n: usize, rng: &mut R) -> CascadeState {
    let a = random_component(n, rng);
    let b = random_component(n, rng);
    CascadeState::from_components(&a, &b)
}

/// Standard Gaussian vector.
pub fn gaussian<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    random_modal(n, 0.0, rng)
}

/// Smooth random source `sum_j a_j cos(nu_j t + theta_j) e_j` sampled at `times`, `a_j ~ j^-2`.
pub fn random_source<R: Rng>(n: usize, times: &[f64], rng: &mut R) -> Vec<DVector<f64>> {
    let a = random_modal(n, 2.0, rng);
    let nu: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    let th: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    times.iter().map(|t| DVector::from_fn(n, |j, _| a[j] * (nu[j] * t + th[j]).cos())).collect()
}
