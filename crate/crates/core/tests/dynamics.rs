mod common;

use cascade_lab::dynamics::*;
use cascade_lab::sampling;
use cascade_lab::{Coefficient, Space};
use common::*;
use nalgebra::DVector;
use proptest::prelude::*;

fn unit(n: usize, k: usize) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    v[k] = 1.0;
    v
}

/// Largest relative error over 17 evenly spaced nodes.
fn max_node_error(space: &Space, c: &CouplingOperator, u0: &CascadeState, n: usize) -> f64 {
    let g = TimeGrid::new(2.0, n).unwrap().allowing_coarse();
    let tr = evolve_cascade(space, u0, c, &g).unwrap();
    (0..=n)
        .step_by(n / 16)
        .map(|k| rel_err(&tr.states[k].to_vector(), &dense_evolve(space, c, u0, g.time(k)).to_vector()))
        .fold(0.0, f64::max)
}

#[test]
fn forward_matches_matrix_exponential() {
    let space = Space::new(16).unwrap();
    let c = bump_coupling(&space);
    let u0 = sampling::random_cascade(16, &mut sampling::rng(7));
    let g = TimeGrid::new(2.0, 1024).unwrap();
    let got = evolve_cascade(&space, &u0, &c, &g).unwrap();
    let want = dense_evolve(&space, &c, &u0, 2.0);
    assert!(rel_err(&got.final_state().to_vector(), &want.to_vector()) < 1e-6);
}

#[test]
fn fourth_order_in_time() {
    let space = Space::new(16).unwrap();
    let c = bump_coupling(&space);
    let u0 = sampling::random_cascade(16, &mut sampling::rng(7));
    let ratio = max_node_error(&space, &c, &u0, 256) / max_node_error(&space, &c, &u0, 512);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn free_wave_half_and_full_period() {
    let space = Space::new(8).unwrap();
    let s = ComponentState::new(unit(8, 0), DVector::zeros(8));
    let half = free_evolve(&space, &s, 1.0);
    assert!((half.u[0] + 1.0).abs() < 1e-14 && half.v.norm() < 1e-13);
    let full = free_evolve(&space, &s, 2.0);
    assert!((full.u[0] - 1.0).abs() < 1e-14 && full.v.norm() < 1e-13);
    let r = sampling::random_component(8, &mut sampling::rng(1));
    let e0 = energy(&space, &r, 1);
    assert!((energy(&space, &free_evolve(&space, &r, 3.7), 1) - e0).abs() < 1e-12 * e0);
}

#[test]
fn decoupled_and_zero_data() {
    let space = Space::new(8).unwrap();
    let c = CouplingOperator::zero(&space, (0.2, 0.3)).unwrap();
    let g = TimeGrid::resolved(1.5, &space, 0.5).unwrap();
    let u0 = sampling::random_cascade(8, &mut sampling::rng(2));
    let tr = evolve_cascade(&space, &u0, &c, &g).unwrap();
    let f1 = free_evolve(&space, &u0.component1(), 1.5);
    let f2 = free_evolve(&space, &u0.component2(), 1.5);
    let end = tr.final_state();
    assert!((&end.u2 - &f2.u).norm() < 1e-13 && (&end.v2 - &f2.v).norm() < 1e-12);
    assert!((&end.u1 - &f1.u).norm() < 1e-13);
    let z = evolve_cascade(&space, &CascadeState::zeros(8), &bump_coupling(&space), &g).unwrap();
    assert!(z.states.iter().all(|s| s.to_vector().norm() == 0.0));
}

#[test]
fn first_component_is_exact_free_wave() {
    let space = Space::new(16).unwrap();
    let c = bump_coupling(&space);
    let u0 = sampling::random_cascade(16, &mut sampling::rng(3));
    let g = TimeGrid::resolved(2.3, &space, 0.5).unwrap();
    let tr = evolve_cascade(&space, &u0, &c, &g).unwrap();
    for (k, s) in tr.states.iter().enumerate().step_by(7) {
        let f = free_evolve(&space, &u0.component1(), g.time(k));
        assert!((&s.u1 - &f.u).norm() < 1e-12);
    }
}

#[test]
fn backward_matches_oracle_and_round_trips() {
    let space = Space::new(16).unwrap();
    let c = bump_coupling(&space);
    let ut = sampling::random_cascade(16, &mut sampling::rng(4));
    let g = TimeGrid::new(2.0, 1024).unwrap();
    let back = evolve_cascade_backward(&space, &ut, &c, &g).unwrap();
    assert!(rel_err(&back.final_state().to_vector(), &ut.to_vector()) < 1e-15);
    let want = dense_evolve(&space, &c, &ut, -2.0);
    assert!(rel_err(&back.states[0].to_vector(), &want.to_vector()) < 1e-6);
    let fwd = evolve_cascade(&space, &back.states[0], &c, &g).unwrap();
    assert!(rel_err(&fwd.final_state().to_vector(), &ut.to_vector()) < 1e-8);
}

#[test]
fn backward_free_wave_is_reflection() {
    let space = Space::new(8).unwrap();
    let c = CouplingOperator::zero(&space, (0.2, 0.3)).unwrap();
    let ut = CascadeState::new(DVector::zeros(8), unit(8, 0), DVector::zeros(8), DVector::zeros(8));
    let g = TimeGrid::resolved(1.3, &space, 0.5).unwrap();
    let back = evolve_cascade_backward(&space, &ut, &c, &g).unwrap();
    for (k, s) in back.states.iter().enumerate() {
        let want = (std::f64::consts::PI * (1.3 - g.time(k))).cos();
        assert!((s.u2[0] - want).abs() < 1e-12);
    }
}

#[test]
fn generator_examples() {
    let space = Space::new(8).unwrap();
    let c = bump_coupling(&space);
    let z = DVector::zeros(8);
    let e1 = unit(8, 0);
    let u = CascadeState::new(z.clone(), z.clone(), e1.clone(), z.clone());
    let a = apply_generator(&space, &u, &c);
    assert_eq!(a, CascadeState::new(e1.clone(), z.clone(), z.clone(), z.clone()));
    let u = CascadeState::new(e1.clone(), z.clone(), z.clone(), z.clone());
    let a = apply_generator(&space, &u, &c);
    let pi2 = std::f64::consts::PI.powi(2);
    assert!((a.v1[0] + pi2).abs() < 1e-12);
    assert!((&a.v2 + c.matrix.column(0)).norm() < 1e-15);
    // inverse of a pure position state puts it in the velocity slot
    let w = invert_generator(&space, &u, &c);
    assert_eq!(w, CascadeState::new(z.clone(), z.clone(), e1.clone(), z.clone()));
    // u1' = phi_1: w1 = -phi_1/pi^2, w2 = A^{-1} C phi_1 / pi^2
    let u = CascadeState::new(z.clone(), z.clone(), e1.clone(), z.clone());
    let w = invert_generator(&space, &u, &c);
    assert!((w.u1[0] + 1.0 / pi2).abs() < 1e-15);
    for j in 0..8 {
        let want = c.matrix[(j, 0)] / pi2 / space.eigenvalues()[j];
        assert!((w.u2[j] - want).abs() < 1e-15);
    }
}

#[test]
fn inverse_commutes_with_dynamics() {
    let space = Space::new(16).unwrap();
    let c = bump_coupling(&space);
    let u0 = sampling::random_cascade(16, &mut sampling::rng(5));
    let g = TimeGrid::resolved(1.0, &space, 0.25).unwrap();
    let a = evolve_cascade(&space, &invert_generator(&space, &u0, &c), &c, &g).unwrap();
    let b = invert_generator(&space, evolve_cascade(&space, &u0, &c, &g).unwrap().final_state(), &c);
    assert!(rel_err(&a.final_state().to_vector(), &b.to_vector()) < 1e-8);
}

#[test]
fn energy_examples() {
    let space = Space::new(8).unwrap();
    let pi2 = std::f64::consts::PI.powi(2);
    let p = ComponentState::new(unit(8, 0), DVector::zeros(8));
    assert!((energy(&space, &p, 1) - pi2 / 2.0).abs() < 1e-14);
    assert!((energy(&space, &p, 0) - 0.5).abs() < 1e-15);
    let v = ComponentState::new(DVector::zeros(8), unit(8, 0));
    assert!((energy(&space, &v, 0) - 0.5 / pi2).abs() < 1e-15);
}

#[test]
fn conservation_and_energy_balance() {
    let space = Space::new(16).unwrap();
    let c = bump_coupling(&space);
    let u0 = sampling::random_cascade(16, &mut sampling::rng(6));
    let g = TimeGrid::resolved(4.0, &space, 0.5).unwrap();
    let tr = evolve_cascade(&space, &u0, &c, &g).unwrap();
    for k in [0, 1] {
        let e0 = energy(&space, &u0.component1(), k);
        for s in &tr.states {
            assert!((energy(&space, &s.component1(), k) - e0).abs() <= 1e-12 * e0);
        }
    }
    let work = tr.integrate(|s| c.apply(&s.u1).dot(&s.v2));
    let de = energy(&space, &tr.final_state().component2(), 1) - energy(&space, &u0.component2(), 1);
    let scale = energy(&space, &u0.component2(), 1) + energy(&space, &u0.component1(), 1);
    assert!((de + work).abs() < 1e-6 * scale);
}

#[test]
fn observation_examples() {
    let space = Space::new(8).unwrap();
    let b = Coefficient::plateau(0.6, 0.7, 0.05, 1.0).unwrap();
    let obs = Observer::interior(&space, &b, Some((0.6, 0.7))).unwrap();
    let s = ComponentState::new(unit(8, 0), DVector::zeros(8));
    match obs.observe(&s) {
        ObservationSample::Field { values, .. } => assert!(values.iter().all(|v| *v == 0.0)),
        _ => panic!("interior sample expected"),
    }
    let bd = Observer::boundary(&space, 1.0, 0.0).unwrap();
    match bd.observe(&s) {
        ObservationSample::Endpoints { left, right } => {
            assert!((left + 2f64.sqrt() * std::f64::consts::PI).abs() < 1e-12);
            assert_eq!(right, 0.0);
        }
        _ => panic!("endpoint sample expected"),
    }
}

#[test]
fn observation_norm_matches_fine_quadrature() {
    let space = Space::new(16).unwrap();
    let b = Coefficient::plateau(0.6, 0.7, 0.05, 1.0).unwrap();
    let obs = Observer::interior(&space, &b, Some((0.6, 0.7))).unwrap();
    let s = sampling::random_component(16, &mut sampling::rng(8));
    // 10^6-panel trapezoid over the support
    let m = 1_000_000;
    let (lo, hi) = (0.55, 0.75);
    let h = (hi - lo) / m as f64;
    let f = |x: f64| {
        let v: f64 = (0..16).map(|j| s.v[j] * cascade_lab::spectral::eigenfunction(j + 1, x)).sum();
        (b.eval(x) * v).powi(2)
    };
    let mut q = 0.5 * (f(lo) + f(hi));
    for i in 1..m {
        q += f(lo + i as f64 * h);
    }
    q *= h;
    assert!((obs.norm_sq(&s) - q).abs() < 1e-6 * q);
}

#[test]
fn observer_rejects_weight_vanishing_on_region() {
    let space = Space::new(8).unwrap();
    let b = Coefficient::plateau(0.6, 0.7, 0.05, 1.0).unwrap();
    assert!(Observer::interior(&space, &b, Some((0.5, 0.7))).is_err());
    assert!(Observer::boundary(&space, -1.0, 0.0).is_err());
}

#[test]
fn coupling_hypotheses_hold_up_to_truncation() {
    let c64 = bump_coupling(&Space::new(64).unwrap());
    assert!(c64.alpha > 0.0 && c64.beta >= c64.alpha);
    let mut rng = sampling::rng(9);
    for _ in 0..50 {
        let w = sampling::gaussian(64, &mut rng);
        let slack = 1e-6 * w.norm_squared();
        assert!(c64.quadratic_bound_excess(&w) <= slack);
    }
    // partial coercivity slack decays under refinement for a fixed smooth field
    let excess = |n: usize| {
        let space = Space::new(n).unwrap();
        let c = bump_coupling(&space);
        let w = space.project_fn(|x| (3.0 * x).sin() + x * x).unwrap();
        let w = DVector::from_column_slice(w.as_slice());
        c.coercivity_excess(&w).max(0.0)
    };
    let (a, b) = (excess(16), excess(64));
    assert!(b <= a.max(1e-12));
}

#[test]
fn inverse_energy_relations() {
    let space = Space::new(16).unwrap();
    let c = bump_coupling(&space);
    let zero = inverse_energy_check(&space, &CascadeState::zeros(16), &c);
    assert_eq!(zero.identity_residual, 0.0);
    assert_eq!(zero.margin_upper, 0.0);
    let z = DVector::zeros(16);
    let w = CascadeState::new(unit(16, 0), z.clone(), z.clone(), z.clone());
    let r = inverse_energy_check(&space, &w, &c);
    assert!(r.identity_residual < 1e-12);
    assert!((r.em1_w1 - 0.5 / std::f64::consts::PI.powi(2)).abs() < 1e-15);
    let mut rng = sampling::rng(10);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..100 {
        let r = inverse_energy_check(&space, &sampling::random_cascade(16, &mut rng), &c);
        assert!(r.holds(1e-10), "{r:?}");
        lo = lo.min(r.equivalence_ratio);
        hi = hi.max(r.equivalence_ratio);
    }
    assert!(lo >= r.c1 && hi <= r.c2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evolution_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let space = Space::new(8).unwrap();
        let c = bump_coupling(&space);
        let g = TimeGrid::resolved(1.0, &space, 0.5).unwrap();
        let mut rng = sampling::rng(seed);
        let u = sampling::random_cascade(8, &mut rng);
        let v = sampling::random_cascade(8, &mut rng);
        let ev = |x: &CascadeState| evolve_cascade(&space, x, &c, &g).unwrap().final_state().to_vector();
        let lhs = ev(&u.scaled(a).add(&v.scaled(b)));
        let rhs = ev(&u) * a + ev(&v) * b;
        prop_assert!((&lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
    }

    #[test]
    fn generator_inverse_round_trip(seed in 0u64..1000, k in 1usize..4) {
        let space = Space::new(8).unwrap();
        let c = bump_coupling(&space);
        let u = sampling::random_cascade(8, &mut sampling::rng(seed));
        let mut w = iterate_inverse(&space, &u, &c, k);
        for _ in 0..k {
            w = apply_generator(&space, &w, &c);
        }
        prop_assert!(rel_err(&w.to_vector(), &u.to_vector()) < 1e-10);
        let one = iterate_inverse(&space, &u, &c, 1);
        prop_assert_eq!(one, invert_generator(&space, &u, &c));
    }

    #[test]
    fn weakened_energy_conserved(seed in 0u64..1000) {
        let space = Space::new(8).unwrap();
        let c = bump_coupling(&space);
        let u = sampling::random_cascade(8, &mut sampling::rng(seed));
        let g = TimeGrid::resolved(2.7, &space, 0.5).unwrap();
        let tr = evolve_cascade(&space, &u, &c, &g).unwrap();
        let e0 = energy(&space, &u.component1(), 0);
        prop_assert!((energy(&space, &tr.final_state().component1(), 0) - e0).abs() <= 1e-12 * e0);
    }
}
