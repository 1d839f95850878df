use proptest::prelude::*;
use qpnls_core::lattice::{index_region, Indexing};
use qpnls_core::linalg::{identity, max_abs_diff, C64};
use qpnls_core::linop::{
    assemble_d, assemble_h, green, linear_localization_diagnostic, matrix_bytes, matrix_from_bytes, random_operator,
    schur_green, sigma_sweep, LdeParams, ShortRangeOperator, StabilityBounds, StabilityStatus,
};
use qpnls_core::linop::perturbation_stability;
use qpnls_core::potential::base_frequencies;
use qpnls_core::{ModelParams, Region, Sign, Site};

fn params(eps: f64, delta: f64) -> ModelParams {
    let mut p = ModelParams::reference();
    p.epsilon = eps;
    p.delta = delta;
    p
}

fn cube_ix(radius: i64) -> Indexing {
    index_region(&Region::cube(&[0, 0], radius).unwrap(), 1, None).unwrap()
}

#[test]
fn diagonal_matches_scalar_formula() {
    let p = params(0.0, 0.0);
    let omega = [0.37];
    let ix = cube_ix(3);
    let sigma = -0.81;
    let d = assemble_d(&p, &omega, &ix, sigma).unwrap();
    for (i, s) in ix.sites().iter().enumerate() {
        let mu = (2.0 * std::f64::consts::PI * (0.17 + s.n[0] as f64 * 0.4142135623)).cos();
        let shift = sigma + s.k[0] as f64 * 0.37;
        let expect = match s.xi {
            Sign::Plus => -shift + mu,
            Sign::Minus => shift + mu,
        };
        assert!((d.diagonal()[i].re - expect).abs() < 1e-14);
        if s.xi == Sign::Minus {
            let plus = ix.index_of(&Site::new(s.k.clone(), s.n.clone(), Sign::Plus)).unwrap();
            assert!((d.diagonal()[i].re + d.diagonal()[plus].re - 2.0 * mu).abs() < 1e-14);
        }
    }
}

#[test]
fn chain_is_tridiagonal_per_layer() {
    let p = params(0.25, 0.0);
    let region = Region::rectangle(vec![0, -3], vec![0, 3]).unwrap();
    let ix = index_region(&region, 1, None).unwrap();
    let h = assemble_h(&p, &[0.4], &ix, 0.1, None).unwrap().dense();
    for i in 0..ix.len() {
        for j in 0..ix.len() {
            let (a, b) = (ix.site(i), ix.site(j));
            let expect = if i == j {
                h[(i, i)]
            } else if a.xi == b.xi && (a.n[0] - b.n[0]).abs() == 1 {
                C64::new(0.25, 0.0)
            } else {
                C64::default()
            };
            assert_eq!(h[(i, j)], expect, "{a} {b}");
        }
    }
}

#[test]
fn decoupled_green_is_reciprocal_diagonal() {
    let p = params(0.0, 0.0);
    let op = assemble_h(&p, &[0.4], &cube_ix(2), 0.123, None).unwrap();
    let (_, g) = green(&op, &LdeParams::default()).unwrap();
    for i in 0..op.dim() {
        for j in 0..op.dim() {
            let expect = if i == j { C64::new(1.0, 0.0) / op.diagonal()[i] } else { C64::default() };
            assert!((g[(i, j)] - expect).norm() < 1e-14);
        }
    }
}

#[test]
fn neumann_regime_is_good() {
    let p = params(1e-6, 1e-6);
    let lde = LdeParams::default();
    let ix = cube_ix(1);
    let omega = [3.0];
    let sigma = 1.5;
    let op = assemble_h(&p, &omega, &ix, sigma, None).unwrap();
    let min_diag = op.diagonal().iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let n = ((ix.diameter() + 1) / 2) as f64;
    assert!(min_diag > lde.floor(n));
    let (rep, _) = green(&op, &lde).unwrap();
    assert!(rep.good);
    assert!(rep.norm <= 2.0 * n.powf(lde.rho).exp());
}

#[test]
fn schur_degenerate_splits_match_green() {
    let p = params(0.1, 0.1);
    let ix = cube_ix(1);
    let op = random_operator(&p, &[0.4], &ix, 0.2, 3).unwrap();
    let (_, g) = green(&op, &LdeParams::default()).unwrap();
    let none = schur_green(&op, &[]).unwrap();
    let all = schur_green(&op, ix.sites()).unwrap();
    assert!(max_abs_diff(&g, &none) < 1e-12);
    assert!(max_abs_diff(&g, &all) < 1e-12);
}

#[test]
fn schur_forty_sites_three_resonant() {
    let p = params(0.05, 0.1);
    let region = Region::rectangle(vec![-1, -3], vec![2, 1]).unwrap();
    let ix = index_region(&region, 1, None).unwrap();
    assert_eq!(ix.len(), 40);
    let op = random_operator(&p, &[0.61], &ix, -0.3, 8).unwrap();
    let diag = op.diagonal();
    let mut order: Vec<usize> = (0..ix.len()).collect();
    order.sort_by(|a, b| diag[*a].norm().total_cmp(&diag[*b].norm()));
    let b: Vec<Site> = order[..3].iter().map(|i| ix.site(*i).clone()).collect();
    let (_, g) = green(&op, &LdeParams::default()).unwrap();
    assert!(max_abs_diff(&g, &schur_green(&op, &b).unwrap()) <= 1e-9);
}

#[test]
fn decoupled_sweep_bad_set_is_the_resonance_intervals() {
    let p = params(0.0, 0.0);
    let lde = LdeParams::default();
    let omega = base_frequencies(&p).unwrap();
    let family = vec![Region::cube(&[0, 0], 1).unwrap()];
    let sigmas: Vec<f64> = (0..801).map(|i| -4.0 + i as f64 * 0.01).collect();
    let stats = sigma_sweep(&p, &omega, &family, &sigmas, None, &lde).unwrap();
    let floor = lde.floor(1.0);
    for (s, rec) in sigmas.iter().zip(&stats.per_sigma) {
        let mut near = false;
        for k in -1..=1 {
            for n in -1..=1 {
                let mu = p.mu(&[n]);
                let c = -(k as f64) * omega[0];
                near |= (s - (c + mu)).abs() <= floor || (s - (c - mu)).abs() <= floor;
            }
        }
        assert_eq!(rec.resonant, near, "sigma {s}");
    }
    assert!(sigma_sweep(&p, &omega, &[], &sigmas, None, &lde).unwrap().bad_fraction == 0.0);
}

#[test]
fn stability_guard_paths() {
    let n = 5;
    let points: Vec<Vec<i64>> = (0..n as i64).map(|i| vec![i]).collect();
    let mut a = identity(n);
    a[(2, 2)] = C64::new(-2.0, 0.0);
    let bounds = StabilityBounds { c: 1.0, range: 1.0, c2: 1.0, epsilon2: None };
    let zero = qpnls_core::linalg::zeros(n, n);
    let rep = perturbation_stability(&a, &zero, &points, &bounds).unwrap();
    assert_eq!(rep.status, StabilityStatus::Verified);
    assert_eq!(rep.max_difference_ratio, Some(0.0));

    let big = qpnls_core::linalg::CMat::from_fn(n, n, |_, _| C64::new(0.5, 0.0));
    let rep = perturbation_stability(&a, &big, &points, &bounds).unwrap();
    assert_eq!(rep.status, StabilityStatus::HypothesisNotMet);
    assert!(rep.norm_perturbed.is_none());
}

#[test]
fn decoupled_eigenvectors_are_deltas() {
    let rep = linear_localization_diagnostic(&params(0.0, 0.0), &[0], 8).unwrap();
    assert!(rep.rates.iter().all(|r| r.is_infinite()));
}

#[test]
fn weak_hopping_localizes() {
    let rep = linear_localization_diagnostic(&params(1e-3, 0.0), &[0], 32).unwrap();
    assert!(rep.fraction_with_rate_at_least(1.0) >= 0.9, "{}", rep.fraction_with_rate_at_least(1.0));
}

#[test]
fn theta_shift_is_box_translation() {
    let mut p = params(1e-2, 0.0);
    let a = linear_localization_diagnostic(&p, &[1], 10).unwrap();
    p.theta = vec![p.theta[0] + p.alpha[0]];
    let b = linear_localization_diagnostic(&p, &[0], 10).unwrap();
    for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn matrix_dump_round_trip() {
    let op = random_operator(&params(0.1, 0.1), &[0.4], &cube_ix(1), 0.0, 1).unwrap();
    let m = op.dense();
    let (bytes, desc) = matrix_bytes(&m);
    assert_eq!(bytes.len(), desc.rows * desc.cols * 16);
    assert_eq!(matrix_from_bytes(&bytes, &desc).unwrap(), m);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn toplitz_in_k(seed in 0u64..1000, shift in -3i64..4, sigma in -1.0f64..1.0, omega in 0.1f64..0.9) {
        let p = params(0.1, 0.2);
        let s = ShortRangeOperator::random(1, 1, 1.0, 1.0, 2, 3, 1.0, seed);
        let base = Region::cube(&[0, 0], 1).unwrap();
        let moved = base.translate(&[shift, 0]);
        let ib = index_region(&base, 1, None).unwrap();
        let im = index_region(&moved, 1, None).unwrap();
        let hb = assemble_h(&p, &[omega], &ib, sigma + shift as f64 * omega, Some(&s)).unwrap();
        let hm = assemble_h(&p, &[omega], &im, sigma, Some(&s)).unwrap();
        for a in ib.sites() {
            for b in ib.sites() {
                let sh = |x: &Site| Site::new(vec![x.k[0] + shift], x.n.clone(), x.xi);
                prop_assert!((hb.get(a, b) - hm.get(&sh(a), &sh(b))).norm() < 1e-14);
            }
        }
        let (_, gb) = green(&hb, &LdeParams::default()).unwrap();
        let (_, gm) = green(&hm, &LdeParams::default()).unwrap();
        prop_assert!(max_abs_diff(&gb, &gm) < 1e-9 * (1.0 + qpnls_core::linalg::max_abs(&gb)));
    }

    #[test]
    fn hermitian_and_inverse_residual(seed in 0u64..1000, sigma in -2.0f64..2.0) {
        let p = params(0.2, 0.3);
        let op = random_operator(&p, &[0.43], &cube_ix(1), sigma, seed).unwrap();
        let h = op.dense();
        prop_assert!(op.hermitian_defect() <= 1e-12 * qpnls_core::linalg::max_abs(&h));
        if let Ok((rep, g)) = green(&op, &LdeParams::default()) {
            prop_assert!(max_abs_diff(&(&h * &g), &identity(op.dim())) <= 1e-10);
            prop_assert!(rep.inverse_residual <= 1e-10);
        }
    }
}
