//! Throughput comparison of the sequential and data-parallel ensemble
//! drivers on a deliberately small plan, so `cargo bench` finishes quickly
//! while still exercising both code paths end to end.

use criterion::{criterion_group, criterion_main, Criterion};
use ssep::harness::{run_experiment, ExecMode, ExperimentPlan, ObservableSpec, WindowChoice};
use ssep::profile::Profile;

fn small_plan() -> ExperimentPlan {
    ExperimentPlan {
        profile: Profile::TanhFront {
            left: 0.3,
            right: 0.7,
            center: 0.0,
            width: 0.5,
        },
        n: 16,
        times: vec![0.25],
        observables: vec![ObservableSpec::Current],
        replicas: 32,
        replica_offset: 0,
        seed: 0xbe4c,
        window: WindowChoice::Rule {
            kappa: 6.0,
            margin: 8,
        },
        bond_offset: 0.0,
        conditioned: false,
    }
}

fn bench_modes(c: &mut Criterion) {
    let plan = small_plan();
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| run_experiment(&plan, ExecMode::Sequential).unwrap())
    });
    group.bench_function("parallel", |b| {
        b.iter(|| run_experiment(&plan, ExecMode::Parallel).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_modes);
criterion_main!(benches);
