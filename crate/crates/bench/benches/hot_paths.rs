use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use superfractal::kernels::StableKernel;
use superfractal::mfa::synthetic::brownian_path;
use superfractal::mfa::{holder_field, HolderConfig};
use superfractal::model::{Grid1D, ModelParams, RunConfig};
use superfractal::sim::{SimConfig, Simulator};

fn kernel(c: &mut Criterion) {
    let k = StableKernel::shared(1.6).unwrap();
    let xs: Vec<f64> = (0..1024).map(|i| -8.0 + 16.0 * i as f64 / 1024.0).collect();
    c.bench_function("kernel_density_1024", |b| {
        b.iter(|| {
            xs.iter()
                .map(|&x| k.density(black_box(0.3), x))
                .sum::<f64>()
        })
    });
}

fn replica(c: &mut Criterion) {
    let p = ModelParams::critical(1.6, 0.4, 1.0);
    let grid = Grid1D::unit(1 << 10).unwrap();
    let run = RunConfig {
        seed: 1,
        n_replicas: 1,
        time_steps: 32,
        r_min: 0.1,
        gamma: 1e-4,
        output_dir: ".".into(),
    };
    let sim = Simulator::new(&p, &grid, &run, &SimConfig::default()).unwrap();
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("replica_1024", |b| {
        b.iter(|| sim.run_replica(black_box(0)).unwrap())
    });
    g.finish();
}

fn holder(c: &mut Criterion) {
    let grid = Grid1D::unit(1 << 12).unwrap();
    let f = brownian_path(&grid, 3);
    let cfg = HolderConfig::default();
    let mut g = c.benchmark_group("holder");
    g.sample_size(10);
    g.bench_function("holder_field_4096", |b| {
        b.iter(|| holder_field(black_box(&f), &grid, &cfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, kernel, replica, holder);
criterion_main!(benches);
