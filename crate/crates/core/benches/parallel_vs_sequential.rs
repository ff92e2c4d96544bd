use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gdmap::dynamics::RunConfig;
use gdmap::experiments::{trap_region_sweep, InitScheme, Optimizer, SweepSpec};
use gdmap::landscape::{nonsingularity_probe, ParamBox};
use gdmap::{Architecture, DataBatch, Execution};

fn trap_sweep(c: &mut Criterion) {
    let arch = Architecture::two_neuron();
    let data = DataBatch::scalar_pair(1.0, 1.0);
    let spec = SweepSpec {
        eta_grid: vec![0.3, 0.6, 0.9],
        n_inits: 200,
        init: InitScheme::two_neuron_box(),
        seed: 0,
        run_cfg: RunConfig::new(0.3),
        optimizer: Optimizer::Gd,
        loss_ceiling: None,
    };
    let mut group = c.benchmark_group("trap_sweep_2neuron");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| trap_region_sweep(black_box(&arch), &data, &spec, exec).unwrap())
        });
    }
    group.finish();
}

fn nonsingularity(c: &mut Criterion) {
    let arch = Architecture::linear(vec![4, 6, 6, 4]).unwrap();
    let x = nalgebra::DMatrix::from_fn(4, 8, |i, j| ((i * 8 + j) as f64 * 0.37).sin());
    let y = nalgebra::DMatrix::from_fn(4, 8, |i, j| ((i + j) as f64 * 0.91).cos());
    let data = DataBatch::new(x, y).unwrap();
    let bounds = ParamBox::cube(arch.param_count(), -1.0, 1.0);
    let mut group = c.benchmark_group("nonsingularity_probe");
    group.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| nonsingularity_probe(black_box(&arch), &data, 0.5, 500, &bounds, 1, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, trap_sweep, nonsingularity);
criterion_main!(benches);
