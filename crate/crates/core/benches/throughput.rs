//! Sample throughput with the rayon pool against a single worker. Build with
//! `--no-default-features` to time the sequential fallback instead.

use cauchy_maps::harmonic::Harmonic;
use cauchy_maps::kernel::{load_kernel, KernelSpec};
use cauchy_maps::maps::{build_counts, UntargetedKernel};
use cauchy_maps::parallel::{map_reduce, stream, with_workers};
use cauchy_maps::peeling::{default_budget, run_exploration};
use cauchy_maps::stats::Welford;
use cauchy_maps::walks::TiltedKernel;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn workers() -> Vec<(&'static str, usize)> {
    let all = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let label = if cfg!(feature = "parallel") { "parallel" } else { "sequential" };
    vec![(label, all), ("single_worker", 1)]
}

fn explorations(c: &mut Criterion) {
    let law = load_kernel(&KernelSpec::Type2Closed).unwrap();
    let l = 1000;
    let kernel = TiltedKernel::new(law, Harmonic::DownP(l));
    let mut group = c.benchmark_group("explorations_l1000_x256");
    group.sample_size(10);
    for (name, w) in workers() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                with_workers(w, || {
                    map_reduce(
                        256,
                        Welford::default,
                        |i| {
                            let e = run_exploration(&kernel, 1, default_budget(l), &mut stream(1, 2, i), false, true)
                                .unwrap();
                            let mut acc = Welford::default();
                            acc.push(e.d_fpp);
                            acc
                        },
                        |a, b| a.merge(b),
                    )
                })
            })
        });
    }
    group.finish();
}

fn map_counts(c: &mut Criterion) {
    let law = load_kernel(&KernelSpec::Type2Closed).unwrap();
    let kernel = UntargetedKernel::new(law);
    let mut group = c.benchmark_group("map_counts_l300_x128");
    group.sample_size(10);
    for (name, w) in workers() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                with_workers(w, || {
                    map_reduce(
                        128,
                        || 0u64,
                        |i| build_counts(&kernel, 300, &mut stream(3, 4, i), 10_000_000).map_or(0, |c| c.edges),
                        |a, b| a + b,
                    )
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, explorations, map_counts);
criterion_main!(benches);
