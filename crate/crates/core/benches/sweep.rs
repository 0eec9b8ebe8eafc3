use std::path::PathBuf;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use poasim_core::sweep::{run_all, run_all_sequential};
use poasim_core::Scenario;

fn batch(name: &str, seeds: u64) -> Vec<Scenario> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"));
    let base = Scenario::load(&path).expect("bundled scenario");
    (1..=seeds).map(|s| base.with_seed(s)).collect()
}

fn seed_sweeps(c: &mut Criterion) {
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    for name in ["aura_fault_free", "clique_fault_free", "pbft_fault_free"] {
        let scenarios = batch(name, 8);
        group.bench_with_input(BenchmarkId::new("sequential", name), &scenarios, |b, s| {
            b.iter(|| run_all_sequential(s))
        });
        group.bench_with_input(BenchmarkId::new("parallel", name), &scenarios, |b, s| b.iter(|| run_all(s)));
    }
    group.finish();
}

criterion_group!(benches, seed_sweeps);
criterion_main!(benches);
