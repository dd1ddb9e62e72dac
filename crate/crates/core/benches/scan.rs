use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharessm::dynamics::{build_recurrence, OscillatorParams, Scheme};
use sharessm::scan::{scan, ScanConfig};

fn bench_scan(c: &mut Criterion) {
    let mut group = c.benchmark_group("scan");
    group.sample_size(20);
    let p = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = OscillatorParams::new(
        (0..p).map(|_| rng.random_range(0.01..1.0)).collect(),
        (0..p).map(|_| rng.random_range(0.01..1.0)).collect(),
    )
    .unwrap();
    for l in [1024usize, 8192, 32768] {
        let drive: Vec<f64> = (0..l * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rec = build_recurrence(&params, Scheme::Imex, &drive).unwrap();
        let s0 = vec![0.0; 2 * p];
        group.throughput(Throughput::Elements((l * p) as u64));
        for (name, cfg) in [
            ("sequential", ScanConfig::sequential()),
            ("parallel", ScanConfig::parallel_always()),
        ] {
            group.bench_with_input(BenchmarkId::new(name, l), &rec, |b, rec| {
                b.iter(|| scan(black_box(rec), &s0, cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_scan);
criterion_main!(benches);
