//! Persistent-chain updates and batch classification, sequential vs parallel.
//!
//! With the `parallel` feature the same work runs inside a one-thread pool
//! and inside the full pool; build with `--no-default-features` for the
//! plain sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use symvec_core::eval::classify_batch;
use symvec_core::nets::{AmortizedPosterior, EbmPrior};
use symvec_core::rng::{domain, stream};
use symvec_core::sampler::PersistentChains;

fn setup() -> (EbmPrior, AmortizedPosterior, PersistentChains) {
    let mut rng = stream(0, domain::INIT, 0);
    let prior = EbmPrior::new(8, 10, &[200, 200], &mut rng).unwrap();
    let enc = AmortizedPosterior::new(20, 8, &[200, 200], &mut rng).unwrap();
    let chains = PersistentChains::new(1000, 8, 0, 0.6, 20).unwrap();
    (prior, enc, chains)
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(String, rayon::ThreadPool)> {
    let all = rayon::current_num_threads();
    let mut out = vec![("sequential".to_string(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap())];
    out.push((format!("parallel-{all}"), rayon::ThreadPoolBuilder::new().num_threads(all).build().unwrap()));
    out
}

fn bench(c: &mut Criterion) {
    let (prior, enc, chains) = setup();
    let xs: Vec<f64> = (0..1000 * 20).map(|i| ((i * 7919) % 113) as f64 / 50.0 - 1.0).collect();
    let mut group = c.benchmark_group("chains");
    group.sample_size(10);

    #[cfg(feature = "parallel")]
    for (name, pool) in modes() {
        group.bench_function(BenchmarkId::new("update_all_1000x20", &name), |b| {
            b.iter(|| pool.install(|| chains.clone().update_all(&prior).unwrap()))
        });
        group.bench_function(BenchmarkId::new("classify_1000x10", &name), |b| {
            b.iter(|| pool.install(|| classify_batch(&prior, &enc, &xs, 10, 0).unwrap()))
        });
    }
    #[cfg(not(feature = "parallel"))]
    {
        group.bench_function(BenchmarkId::new("update_all_1000x20", "sequential"), |b| {
            b.iter(|| chains.clone().update_all(&prior).unwrap())
        });
        group.bench_function(BenchmarkId::new("classify_1000x10", "sequential"), |b| {
            b.iter(|| classify_batch(&prior, &enc, &xs, 10, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
