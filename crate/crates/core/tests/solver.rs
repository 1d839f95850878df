use std::collections::BTreeMap;

use proptest::prelude::*;
use qpnls_core::lattice::resonant_sites;
use qpnls_core::linalg::C64;
use qpnls_core::potential::base_frequencies;
use qpnls_core::solver::{
    convolution_nonlinearity, convolve, convolve_direct, convolve_fft, evaluate_f, initial_state,
    linearization_kernel, newton_step, run_solver, solve_q, symmetrize, FourierState, KMap, Schedule, Solution,
    SymmetryOrder,
};
use qpnls_core::{ModelParams, Sign, Site};

fn site(k: i64, n: i64, xi: Sign) -> Site {
    Site::new(vec![k], vec![n], xi)
}

/// `u_hat(k,n) = w e^{-c(|k|+|n|)}` with `|w| <= 1`, mirrored into the `-`
/// layer by conjugacy.
fn decaying_state(c: f64, radius: i64, phases: &[f64]) -> FourierState {
    let mut st = FourierState::new(1, 1);
    let mut i = 0;
    for k in -radius..=radius {
        for n in -radius..=radius {
            let w = C64::from_polar((-c * (k.abs() + n.abs()) as f64).exp(), phases[i % phases.len()]);
            i += 1;
            st.set(site(k, n, Sign::Plus), w);
            st.set(site(-k, n, Sign::Minus), w.conj());
        }
    }
    st
}

fn brute_triple(u: &KMap, v: &KMap) -> KMap {
    // (u * v) * u by explicit triple sum.
    let mut out = KMap::new();
    for (a, x) in u {
        for (b, y) in v {
            for (c, z) in u {
                *out.entry(vec![a[0] + b[0] + c[0]]).or_default() += x * y * z;
            }
        }
    }
    out
}

#[test]
fn cubic_nonlinearity_matches_triple_loop() {
    let st = decaying_state(0.7, 3, &[0.1, 1.3, -2.2, 0.5]);
    let nl = convolution_nonlinearity(&st, 1, None);
    for (n, (u, v)) in st.layers() {
        let expect = brute_triple(&u, &v);
        for (k, val) in expect {
            let got = nl.values.get(&Site::new(k.clone(), n.clone(), Sign::Plus)).copied().unwrap_or_default();
            assert!((got - val).norm() < 1e-12, "k={k:?} n={n:?}");
        }
    }
}

#[test]
fn zero_amplitude_gives_zero_nonlinearity() {
    let nl = convolution_nonlinearity(&FourierState::new(1, 1), 2, None);
    assert!(nl.values.values().all(|v| *v == C64::default()));
}

#[test]
fn hopping_only_residual_is_neighbor_sum() {
    let mut p = ModelParams::reference();
    p.delta = 0.0;
    p.epsilon = 0.01;
    let st = initial_state(&p);
    let omega0 = base_frequencies(&p).unwrap();
    let f = evaluate_f(&st, &omega0, &p).unwrap();
    let mut expect: BTreeMap<Site, C64> = BTreeMap::new();
    for s in [-1, 1] {
        expect.insert(site(1, s, Sign::Plus), C64::new(0.01 * 1.5, 0.0));
        expect.insert(site(-1, s, Sign::Minus), C64::new(0.01 * 1.5, 0.0));
    }
    for (s, v) in &f.values {
        let e = expect.get(s).copied().unwrap_or_default();
        assert!((v - e).norm() < 1e-17, "{s}: {v} vs {e}");
    }
    for (s, e) in &expect {
        assert!((f.get(s) - e).norm() < 1e-17);
    }
}

#[test]
fn residual_layers_are_conjugate_for_symmetric_states() {
    let p = ModelParams::reference();
    let st = symmetrize(&decaying_state(1.0, 2, &[0.3, -1.1, 2.0])).0;
    let f = evaluate_f(&st, &[0.47], &p).unwrap();
    for (s, v) in &f.values {
        if s.xi == Sign::Plus {
            let m = f.get(&site(-s.k[0], s.n[0], Sign::Minus));
            assert!((m - v.conj()).norm() < 1e-15);
        }
    }
}

#[test]
fn newton_step_is_identity_at_a_zero() {
    let mut p = ModelParams::reference();
    p.epsilon = 0.0;
    p.delta = 0.0;
    let st = initial_state(&p);
    let omega0 = base_frequencies(&p).unwrap();
    let (next, corr) = newton_step(&st, &omega0, &p, 2, None).unwrap();
    assert_eq!(corr, 0.0);
    assert_eq!(next, st);
}

#[test]
fn q_solve_limits() {
    let mut p = ModelParams::reference();
    p.epsilon = 0.0;
    p.delta = 0.0;
    let omega0 = base_frequencies(&p).unwrap();
    assert_eq!(solve_q(&initial_state(&p), &p, &omega0).unwrap().omega, omega0);

    p.delta = 1e-3;
    let q = solve_q(&initial_state(&p), &p, &omega0).unwrap();
    assert!((q.omega[0] - omega0[0] - 1e-3 * 1.5f64.powi(2)).abs() < 1e-15);
}

#[test]
fn q_rows_vanish_at_convergence() {
    let sol = run_solver(&ModelParams::reference(), &Schedule::default()).unwrap();
    let f = evaluate_f(&sol.state, &sol.omega, &sol.params).unwrap();
    let s = resonant_sites(&sol.params.sites);
    assert!(f.sup_on(&s) <= 1e-12, "{}", f.sup_on(&s));
}

#[test]
fn reference_run_golden() {
    let sol = run_solver(&ModelParams::reference(), &Schedule::default()).unwrap();
    assert!((sol.omega[0] - 0.48400665020752).abs() < 1e-12, "{}", sol.omega[0]);
    assert!((sol.omega[0] - sol.omega0[0] - 2.2530e-3).abs() < 1e-7);
    assert_eq!(sol.trace.records.len(), 2);
    assert!(sol.certificates.residual < 1e-10);
    assert!((sol.certificates.decay_sum - 0.0331).abs() < 1e-4);
    let res = sol.trace.residuals();
    // Measured contraction constant of the reference run, exponent 1.3.
    let c = res.windows(2).map(|w| w[1] / w[0].powf(1.3)).fold(0.0, f64::max);
    assert!(c <= 1.0, "{c}");
}

#[test]
fn both_symmetry_orders_converge_to_the_same_frequency() {
    let p = ModelParams::reference();
    let a = run_solver(&p, &Schedule::default()).unwrap();
    let b = run_solver(&p, &Schedule { order: SymmetryOrder::QThenSymmetrize, ..Schedule::default() }).unwrap();
    assert!((a.omega[0] - b.omega[0]).abs() < 1e-12);
}

#[test]
fn solution_round_trips_through_json() {
    let sol = run_solver(&ModelParams::reference(), &Schedule::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("solution.json");
    sol.save(&path).unwrap();
    let back = Solution::load(&path).unwrap();
    assert_eq!(back.state, sol.state);
    assert_eq!(back.omega, sol.omega);
    assert_eq!(back.trace, sol.trace);
    assert_eq!(back.recompute_certificates().unwrap(), sol.certificates);
}

#[test]
fn symmetrize_fills_zeroed_layer_by_averaging() {
    let mut st = FourierState::new(1, 1);
    st.set(site(2, 1, Sign::Plus), C64::new(0.4, 0.2));
    let (sym, defect) = symmetrize(&st);
    assert_eq!(sym.get(&site(-2, 1, Sign::Minus)), C64::new(0.2, -0.1));
    assert_eq!(sym.get(&site(2, 1, Sign::Plus)), C64::new(0.2, 0.1));
    assert!(defect > 0.0);
    assert_eq!(sym.conjugacy_defect(), 0.0);
}

fn kmap_strategy() -> impl Strategy<Value = KMap> {
    prop::collection::btree_map(
        (-6i64..6).prop_map(|k| vec![k]),
        (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| C64::new(a, b)),
        1..10,
    )
}

proptest! {
    #[test]
    fn convolution_paths_agree(a in kmap_strategy(), b in kmap_strategy()) {
        let direct = convolve_direct(&a, &b);
        let fft = convolve_fft(&a, &b);
        let auto = convolve(&a, &b);
        let mut brute = KMap::new();
        for (x, u) in &a {
            for (y, v) in &b {
                *brute.entry(vec![x[0] + y[0]]).or_default() += u * v;
            }
        }
        for (k, v) in &brute {
            let g = |m: &KMap| m.get(k).copied().unwrap_or_default();
            prop_assert!((g(&direct) - v).norm() <= 1e-12);
            prop_assert!((g(&fft) - v).norm() <= 1e-12);
            prop_assert!((g(&auto) - v).norm() <= 1e-12);
        }
    }

    #[test]
    fn symmetrize_is_idempotent(phases in prop::collection::vec(-3.0f64..3.0, 5), skew in -0.5f64..0.5) {
        let mut st = decaying_state(0.8, 2, &phases);
        st.set(site(1, 0, Sign::Minus), C64::new(skew, 0.3));
        let once = symmetrize(&st).0;
        let twice = symmetrize(&once).0;
        prop_assert_eq!(once.conjugacy_defect(), 0.0);
        for (s, v) in once.coeffs() {
            prop_assert!((twice.get(s) - v).norm() <= 1e-16);
        }
    }

    #[test]
    fn linearization_kernel_decays(c in 0.5f64..2.0, phases in prop::collection::vec(-3.0f64..3.0, 7)) {
        let st = decaying_state(c, 3, &phases);
        let t = linearization_kernel(&st, 1);
        let k_const = 2.0 * (1.0 + 2.0 / ((2.0 * c).exp() - 1.0));
        for ((dk, n, _, _), v) in t.entries() {
            let a = dk[0].abs() as f64;
            let bound = k_const * (1.0 + a) * (-c * a - c * n[0].abs() as f64).exp();
            prop_assert!(v.norm() <= bound * (1.0 + 1e-12), "dk={dk:?} n={n:?} |T|={} bound={bound}", v.norm());
        }
    }
}
