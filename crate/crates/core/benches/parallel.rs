use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sparse_fts::pipeline::{fit_model, BandwidthChoice, FitConfig, SpanChoice};
use sparse_fts::recovery::{recover_many, McConfig};
use sparse_fts::simulate::{benchmark_process, simulate_dataset, DiscreteProcess, ProcessName, SamplingSpec};
use sparse_fts::smoothing::{estimate_mean, BandwidthSet};
use sparse_fts::spectral::{estimate_spectral_density, frequency_grid, precompute_lag_sums};
use sparse_fts::{Parallelism, SplineSpace};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("parallel", Parallelism::Available)];

fn bench(c: &mut Criterion) {
    let space = SplineSpace::standard();
    let process = DiscreteProcess::new(&benchmark_process(ProcessName::Fma4), &space).unwrap();
    let sim = simulate_dataset(&process, &SamplingSpec { horizon: 150, n_max: 10, seed: 1 }, 20.0).unwrap();
    let cfg = FitConfig {
        bandwidths: BandwidthChoice::Fixed(BandwidthSet::new(0.15, 0.2, 0.15).unwrap()),
        span: SpanChoice::Rule,
        ..Default::default()
    };
    let mean = estimate_mean(&sim.data, 0.15, &space).unwrap();
    let fit = fit_model(&sim.data, &cfg, &space).unwrap();
    let times: Vec<usize> = (1..=20).collect();
    let mc = McConfig { n_paths: 5000, ..Default::default() };

    let mut g = c.benchmark_group("spectral");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                mode.install(|| {
                    let pre = precompute_lag_sums(&sim.data, &mean, 6, 0.2, &space).unwrap();
                    black_box(estimate_spectral_density(&pre, &frequency_grid(6)).unwrap())
                })
            })
        });
    }
    g.finish();

    let mut g = c.benchmark_group("fit");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mode.install(|| black_box(fit_model(&sim.data, &cfg, &space).unwrap())))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("recover");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mode.install(|| black_box(recover_many(&sim.data, &fit.model, &times, 0.05, &mc).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
