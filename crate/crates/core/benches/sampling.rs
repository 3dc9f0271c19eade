use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use repdiv_core::numerics::RngStream;
use repdiv_core::posterior::{diversity_draws, PaddedCounts, SamplerConfig, SamplingMode};
use repdiv_core::uncertainty::hyper_covariance;
use repdiv_core::{fit, par, CloneCounts, FitConfig};

fn dataset() -> CloneCounts {
    // a skewed repertoire: many singletons, a few expanded clones
    let mut counts = Vec::new();
    for (value, mult) in [
        (1u64, 600usize),
        (2, 150),
        (3, 60),
        (5, 30),
        (10, 12),
        (40, 5),
        (200, 2),
    ] {
        counts.extend(std::iter::repeat_n(value, mult));
    }
    CloneCounts::new(counts).unwrap()
}

fn bench_draws(c: &mut Criterion) {
    let counts = dataset();
    let fitted = fit(&counts, &FitConfig::default()).unwrap();
    let cov = hyper_covariance(&counts, &fitted).unwrap();
    let padded = PaddedCounts::new(&counts, &fitted).unwrap();
    let config = SamplerConfig {
        b_draws: 200,
        mode: SamplingMode::HyperUncertain,
        per_clone_hyper: true,
        ..SamplerConfig::default()
    };
    let mut group = c.benchmark_group("diversity_draws");
    group.sample_size(10);
    for threads in [1usize, par::current_threads()] {
        group.bench_with_input(BenchmarkId::new("threads", threads), &threads, |b, &t| {
            b.iter(|| {
                par::with_threads(t, || {
                    diversity_draws(&padded, &fitted.prior, &cov, &config, RngStream::new(7, 0)).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_draws);
criterion_main!(benches);
