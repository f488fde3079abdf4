mod common;

use cascade_lab::dynamics::{free_evolve, ComponentState, CouplingOperator, Observer, TimeGrid};
use cascade_lab::insensitize::*;
use cascade_lab::{sampling, Space};
use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn problem(n: usize, t: f64, boundary: bool, seed: u64) -> (Space, InsensitizeProblem) {
    let space = Space::new(n).unwrap();
    let c = bump_coupling(&space);
    let ctrl = if boundary { Observer::boundary(&space, 1.0, 0.0).unwrap() } else { interior_observer(&space) };
    let grid = TimeGrid::resolved(t, &space, 0.5).unwrap();
    let mut rng = sampling::rng(seed);
    let data = sampling::random_component(n, &mut rng);
    let mut p = InsensitizeProblem::new(data.u, data.v, c, ctrl, grid);
    p.source = sampling::random_source(n, &grid.times(), &mut rng);
    p.seed = seed;
    (space, p)
}

fn random_control(p: &InsensitizeProblem, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = sampling::rng(seed);
    let k = p.control.channels();
    (0..=p.grid.n_steps()).map(|_| sampling::gaussian(k, &mut rng) * 0.1).collect()
}

#[test]
fn phi_of_separable_mode_is_one_half() {
    let space = Space::new(4).unwrap();
    let grid = TimeGrid::resolved(2.0, &space, 0.1).unwrap();
    let mut v = DVector::zeros(4);
    v[0] = std::f64::consts::PI;
    let s = ComponentState::new(DVector::zeros(4), v);
    let times: Vec<f64> = (0..=2 * grid.n_steps()).map(|i| 0.5 * grid.dt() * i as f64).collect();
    let ys: Vec<DVector<f64>> = times.iter().map(|t| free_evolve(&space, &s, *t).u).collect();
    let refs: Vec<&DVector<f64>> = ys.iter().collect();
    let val = phi(&refs, &DMatrix::identity(4, 4), &grid);
    assert!((val - 0.5).abs() < 1e-9, "{val}");
    assert_eq!(phi(&refs, &DMatrix::zeros(4, 4), &grid), 0.0);
}

#[test]
fn interior_control_is_certified() {
    let (space, p) = problem(16, 4.0, false, 1);
    let (v, cert) = insensitize(&space, &p).unwrap();
    assert_eq!(v.len(), p.grid.n_steps() + 1);
    assert!(cert.passes(), "{}", cert.report());
    assert!(cert.derivatives.len() >= 10);
    assert!(cert.exponent >= 1.9, "{}", cert.exponent);
}

#[test]
fn boundary_control_is_certified() {
    let (space, p) = problem(16, 4.0, true, 2);
    let (_, cert) = insensitize(&space, &p).unwrap();
    assert!(cert.passes(), "{}", cert.report());
}

#[test]
fn zero_data_gives_zero_control_and_zero_certificate() {
    let (space, mut p) = problem(8, 4.0, false, 3);
    p.y0.fill(0.0);
    p.y1.fill(0.0);
    p.source.clear();
    let (v, cert) = insensitize(&space, &p).unwrap();
    assert!(v.iter().all(|x| x.norm() == 0.0));
    assert_eq!(cert.phi, 0.0);
    assert!(cert.derivatives.iter().all(|d| d.d_tau0 == 0.0 && d.d_tau1 == 0.0));
    assert!(cert.passes());
}

#[test]
fn zero_weight_reduces_to_scalar_null_control() {
    let (space, mut p) = problem(12, 4.0, false, 4);
    p.coupling = CouplingOperator::zero(&space, (0.2, 0.3)).unwrap();
    let (_, cert) = insensitize(&space, &p).unwrap();
    assert_eq!(cert.phi, 0.0);
    assert!(cert.relative_terminal_y2 <= 1e-6);
    assert_eq!(cert.relative_terminal_y1, 0.0);
    assert!(cert.passes());
}

#[test]
fn analytic_derivatives_match_finite_differences_for_generic_controls() {
    let (space, p) = problem(12, 3.0, false, 5);
    let v = random_control(&p, 6);
    let cert = certify(&space, &p, &v, 0).unwrap();
    for d in &cert.derivatives {
        let r0 = (d.d_tau0 - d.d_tau0_fd).abs() / d.d_tau0.abs();
        let r1 = (d.d_tau1 - d.d_tau1_fd).abs() / d.d_tau1.abs();
        assert!(r0 < 1e-5 && r1 < 1e-5, "{}: {r0} {r1}", d.id);
    }
    // A generic control does not insensitize.
    assert!(cert.max_relative_derivative() > 1e-3);
    assert!(!cert.passes());
}

#[test]
fn derivatives_equal_terminal_pairings_of_the_first_component() {
    let (space, p) = problem(12, 3.0, true, 7);
    let v = random_control(&p, 8);
    let mut rng = sampling::rng(9);
    let z0 = sampling::random_modal(12, 1.0, &mut rng);
    let z1 = sampling::random_modal(12, 1.0, &mut rng);
    let (a0, a1) = sensitivity_derivatives(&space, &p, &v, &z0, &z1).unwrap();
    let (b0, b1) = derivatives_from_terminal_pairing(&space, &p, &v, &z0, &z1).unwrap();
    assert!((a0 - b0).abs() < 1e-10 * a0.abs().max(1e-6), "{a0} {b0}");
    assert!((a1 - b1).abs() < 1e-10 * a1.abs().max(1e-6), "{a1} {b1}");
}

#[test]
fn modal_derivatives_agree_with_single_direction_solves() {
    let (space, p) = problem(10, 3.0, false, 10);
    let v = random_control(&p, 11);
    let tr = p.simulate(&space, &v, None, None).unwrap();
    let (d0, d1) = modal_derivatives(&space, &p, &tr);
    for j in [0, 3, 9] {
        let e = DVector::from_fn(10, |i, _| if i == j { 1.0 } else { 0.0 });
        let (a0, a1) = sensitivity_derivatives(&space, &p, &v, &e, &e).unwrap();
        assert!((a0 - d0[j]).abs() < 1e-12 * a0.abs().max(1e-8));
        assert!((a1 - d1[j]).abs() < 1e-12 * a1.abs().max(1e-8));
    }
}

#[test]
fn converse_agrees_with_forward_characterization() {
    for seed in 0..2 {
        let (space, p) = problem(12, 4.0, false, 20 + seed);
        let (v, _) = insensitize(&space, &p).unwrap();
        let pos = verify_converse(&space, &p, &v).unwrap();
        assert!(pos.terminal_vanishes && pos.derivatives_vanish && pos.consistent(), "{pos:?}");
        let neg = verify_converse(&space, &p, &[]).unwrap();
        assert!(!neg.terminal_vanishes && !neg.derivatives_vanish && neg.consistent(), "{neg:?}");
        assert!(neg.terminal_residual > 1e-3);
    }
}

#[test]
fn zero_weight_converse_passes_vacuously() {
    let (space, mut p) = problem(8, 4.0, false, 30);
    p.coupling = CouplingOperator::zero(&space, (0.2, 0.3)).unwrap();
    let r = verify_converse(&space, &p, &[]).unwrap();
    assert_eq!(r.terminal_residual, 0.0);
    assert!(r.terminal_vanishes && r.derivatives_vanish);
}

#[test]
fn short_horizon_is_refused_with_region_and_time() {
    let (space, p) = problem(8, 1.0, false, 31);
    match insensitize(&space, &p) {
        Err(InsensitizeError::Geometry { min_time, horizon, .. }) => {
            assert!((min_time - 1.4).abs() < 1e-12);
            assert_eq!(horizon, 1.0);
        }
        other => panic!("expected geometric refusal, got {other:?}"),
    }
}

#[test]
fn slope_fit_recovers_powers() {
    let pts: Vec<(f64, f64)> = [1e-1, 1e-2, 1e-3].iter().map(|t: &f64| (*t, 3.0 * t * t)).collect();
    assert!((loglog_slope(&pts) - 2.0).abs() < 1e-12);
    assert!(loglog_slope(&[(0.1, 0.0)]).is_nan());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn derivative_is_linear_in_the_perturbation(seed in 0u64..1000, a in -3.0f64..3.0) {
        let (space, p) = problem(8, 2.0, false, seed);
        let v = random_control(&p, seed + 1);
        let mut rng = sampling::rng(seed + 2);
        let x = sampling::random_modal(8, 1.0, &mut rng);
        let y = sampling::random_modal(8, 1.0, &mut rng);
        let z = &x + &y * a;
        let (dx, _) = sensitivity_derivatives(&space, &p, &v, &x, &x).unwrap();
        let (dy, _) = sensitivity_derivatives(&space, &p, &v, &y, &y).unwrap();
        let (dz, _) = sensitivity_derivatives(&space, &p, &v, &z, &z).unwrap();
        prop_assert!((dz - dx - a * dy).abs() <= 1e-8 * (dx.abs() + (a * dy).abs()).max(1e-12));
    }
}
