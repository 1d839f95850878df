use std::f64::consts::PI;

use proptest::prelude::*;
use qpnls_core::evolve::{integrate, reconstruct, reconstruct_on, LatticeField, Method};
use qpnls_core::linalg::C64;
use qpnls_core::potential::Term;
use qpnls_core::solver::{run_solver, Schedule};
use qpnls_core::{ModelParams, TrigPoly};

/// `J_n(x)` by its power series.
fn bessel_j(n: u32, x: f64) -> f64 {
    let mut term = (x / 2.0).powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
    let mut sum = 0.0;
    for m in 0..60 {
        sum += term;
        let m = f64::from(m);
        term *= -(x * x / 4.0) / ((m + 1.0) * (m + 1.0 + f64::from(n)));
    }
    sum
}

fn flat(epsilon: f64, delta: f64) -> ModelParams {
    let mut p = ModelParams::reference();
    p.potential = TrigPoly::new(1, 1, vec![Term { l: vec![1], v: 0.0, phase: 0.0 }]);
    p.epsilon = epsilon;
    p.delta = delta;
    p
}

#[test]
fn free_chain_matches_bessel_functions() {
    let mut u0 = LatticeField::zeros(vec![-25], vec![25]).unwrap();
    let origin = u0.index_of(&[0]).unwrap();
    u0.values[origin] = C64::new(1.0, 0.0);
    let eps = 0.8;
    let traj = integrate(&u0, &flat(eps, 0.0), 1.0, 1e-3, Method::Rk4, 1000).unwrap();
    let u = traj.states.last().unwrap();
    for n in -10i64..=10 {
        let j = bessel_j(n.unsigned_abs() as u32, 2.0 * eps) * if n < 0 && n % 2 != 0 { -1.0 } else { 1.0 };
        let expect = C64::i().powi(n.rem_euclid(4) as i32) * j;
        assert!((u.get(&[n]) - expect).norm() < 1e-8, "n={n}: {} vs {expect}", u.get(&[n]));
    }
}

#[test]
fn bessel_oracle_sanity() {
    assert!((bessel_j(0, 1.0) - 0.7651976865579666).abs() < 1e-15);
    assert!((bessel_j(3, 2.5) - 0.21660039103911).abs() < 1e-13);
}

#[test]
fn series_is_periodic_in_time() {
    let sol = run_solver(&ModelParams::reference(), &Schedule::default()).unwrap();
    let period = 2.0 * PI / sol.omega[0];
    for t in [0.0, 0.7, 3.1] {
        let a = reconstruct(&sol, t).unwrap();
        let b = reconstruct(&sol, t + period).unwrap();
        assert!(a.max_diff(&b) < 1e-12);
    }
}

#[test]
fn decoupled_solution_rotates_the_anchor() {
    let mut p = ModelParams::reference();
    p.epsilon = 0.0;
    p.delta = 0.0;
    let sol = run_solver(&p, &Schedule::default()).unwrap();
    let w = sol.omega[0];
    for t in [0.0, 0.4, 2.5, 11.0] {
        let u = reconstruct_on(&sol, t, &[-3], &[3]).unwrap();
        assert!((u.get(&[0]) - C64::from_polar(1.5, w * t)).norm() < 1e-14);
        assert!(u.values.iter().enumerate().all(|(i, z)| i == u.index_of(&[0]).unwrap() || z.norm() == 0.0));
    }
}

#[test]
fn invalid_step_is_rejected() {
    let u0 = LatticeField::zeros(vec![-1], vec![1]).unwrap();
    assert!(integrate(&u0, &flat(0.1, 0.0), 1.0, 0.0, Method::Rk4, 1).is_err());
    assert!(integrate(&u0, &flat(0.1, 0.0), 1.0, 0.1, Method::Rk4, 0).is_err());
}

#[test]
fn gbs_agrees_with_rk4() {
    let mut u0 = LatticeField::zeros(vec![-8], vec![8]).unwrap();
    for (i, v) in u0.values.iter_mut().enumerate() {
        *v = C64::from_polar((-(i as f64 - 8.0).abs()).exp(), i as f64);
    }
    let p = ModelParams::reference();
    let a = integrate(&u0, &p, 2.0, 1e-3, Method::Rk4, 2000).unwrap();
    let b = integrate(&u0, &p, 2.0, 0.05, Method::Gbs8, 40).unwrap();
    assert!(a.states.last().unwrap().max_diff(b.states.last().unwrap()) < 1e-9);
}

fn field(values: Vec<(f64, f64)>) -> LatticeField {
    let r = (values.len() / 2) as i64;
    LatticeField {
        lo: vec![-r],
        hi: vec![values.len() as i64 - 1 - r],
        values: values.into_iter().map(|(m, a)| C64::from_polar(m, a)).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn norm_is_conserved(
        values in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 3..12),
        eps in 0.0f64..0.3,
        delta in 0.0f64..0.3,
    ) {
        let mut p = ModelParams::reference();
        p.epsilon = eps;
        p.delta = delta;
        let traj = integrate(&field(values), &p, 1.0, 1e-3, Method::Rk4, 1000).unwrap();
        prop_assert!(traj.norm_drift < 1e-10);
    }

    #[test]
    fn decoupled_closed_form(values in prop::collection::vec((0.0f64..1.0, -3.0f64..3.0), 3..8), delta in 0.0f64..0.5) {
        let mut p = ModelParams::reference();
        p.epsilon = 0.0;
        p.delta = delta;
        let u0 = field(values);
        let t = 1.5;
        let traj = integrate(&u0, &p, t, 1e-3, Method::Rk4, 1500).unwrap();
        let u = traj.states.last().unwrap();
        for (n, z) in u0.points().iter().zip(&u0.values) {
            let rate = p.mu(n) + delta * z.norm_sqr();
            let expect = z * C64::from_polar(1.0, rate * t);
            prop_assert!((u.get(n) - expect).norm() < 1e-10);
        }
    }
}
