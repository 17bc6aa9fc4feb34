use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use peel_lab_core::halfplane::{sample_simple_step, Escalation};
use peel_lab_core::peel::map::{build_ball, Mode};
use peel_lab_core::percolation::{arm_thresholds, Coloring, Kind};
use peel_lab_core::rng::stream;
use peel_lab_core::walks::{run_a_core, WalkKit};
use peel_lab_core::weights::make_2p_angulation;

fn kit() -> WalkKit {
    WalkKit::for_weights(&make_2p_angulation(2).unwrap(), 2000, 4096).unwrap()
}

fn setup(c: &mut Criterion) {
    let q = make_2p_angulation(2).unwrap();
    c.bench_function("walk_kit_l2000", |b| b.iter(|| WalkKit::for_weights(black_box(&q), 2000, 4096).unwrap()));
}

fn sampling(c: &mut Criterion) {
    let kit = kit();
    let mut seed = 0u64;
    c.bench_function("ball_general_r4", |b| {
        b.iter(|| {
            seed += 1;
            build_ball(&kit, Mode::General, 4, stream(seed, &[1]), 1 << 22).unwrap()
        })
    });
    c.bench_function("core_run", |b| {
        b.iter(|| {
            seed += 1;
            run_a_core(&kit, &mut stream(seed, &[2]), 1 << 28, false).unwrap()
        })
    });
    let esc = Escalation { max_darts: 1 << 24, ..Escalation::default() };
    c.bench_function("simple_step", |b| {
        b.iter(|| {
            seed += 1;
            sample_simple_step(&kit, stream(seed, &[3]), esc).unwrap()
        })
    });
}

fn percolation(c: &mut Criterion) {
    let kit = kit();
    let (ball, _) = build_ball(&kit, Mode::General, 10, stream(7, &[4]), 1 << 24).unwrap();
    for kind in Kind::ALL {
        let color = Coloring::new(&ball, kind, 7, 0);
        c.bench_function(&format!("arm_thresholds_{kind:?}_r10").to_lowercase(), |b| {
            b.iter(|| arm_thresholds(black_box(&ball), &color, &[4, 6, 8, 10]).unwrap())
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = setup, sampling, percolation
}
criterion_main!(benches);
