use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qpnls_core::diophantine::{wronskian_det, WronskianInput, WRONSKIAN_CAP};
use qpnls_core::lattice::index_region;
use qpnls_core::linalg::C64;
use qpnls_core::linop::{assemble_h, green, LdeParams};
use qpnls_core::potential::base_frequencies;
use qpnls_core::solver::{convolve_direct, convolve_fft, initial_state, newton_step, KMap};
use qpnls_core::{ModelParams, Region, TrigPoly};

fn kmap(len: i64) -> KMap {
    (-len..=len).map(|k| (vec![k], C64::from_polar((-(k.abs() as f64) * 0.3).exp(), k as f64))).collect()
}

fn convolution(c: &mut Criterion) {
    let (a, b) = (kmap(64), kmap(64));
    c.bench_function("convolve_direct_129", |bch| bch.iter(|| convolve_direct(black_box(&a), black_box(&b))));
    c.bench_function("convolve_fft_129", |bch| bch.iter(|| convolve_fft(black_box(&a), black_box(&b))));
}

fn green_function(c: &mut Criterion) {
    let p = ModelParams::reference();
    let omega = base_frequencies(&p).unwrap();
    let ix = index_region(&Region::cube(&[0, 0], 4).unwrap(), 1, None).unwrap();
    let op = assemble_h(&p, &omega, &ix, 0.3, None).unwrap();
    let lde = LdeParams::default();
    c.bench_function("green_cube4", |bch| bch.iter(|| green(black_box(&op), &lde).unwrap()));
}

fn newton(c: &mut Criterion) {
    let p = ModelParams::reference();
    let omega = base_frequencies(&p).unwrap();
    let st = initial_state(&p);
    c.bench_function("newton_step_n4", |bch| bch.iter(|| newton_step(black_box(&st), &omega, &p, 4, None).unwrap()));
}

fn wronskian(c: &mut Criterion) {
    let input = WronskianInput {
        potential: TrigPoly::cosine(),
        alpha: vec![0.31],
        theta: vec![0.12],
        beta: vec![0.57],
        q: vec![0.23],
        sites: vec![vec![-2], vec![0], vec![1], vec![3]],
    };
    c.bench_function("wronskian_4", |bch| bch.iter(|| wronskian_det(black_box(&input), WRONSKIAN_CAP).unwrap()));
}

criterion_group!(benches, convolution, green_function, newton, wronskian);
criterion_main!(benches);
