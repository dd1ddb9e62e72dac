use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sharessm::network::{ForwardOptions, Model, ModelConfig};
use sharessm::scan::ScanConfig;

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    let model = Model::new(ModelConfig::classification(1, 16, 16, 2, 2), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for l in [1000usize, 4000] {
        let xs: Vec<Array2<f64>> = (0..16)
            .map(|_| Array2::from_shape_simple_fn((l, 1), || rng.random_range(-1.0..1.0)))
            .collect();
        for (name, cfg) in [
            ("sequential", ScanConfig::sequential()),
            ("parallel", ScanConfig::default()),
        ] {
            group.bench_with_input(BenchmarkId::new(format!("eval/{name}"), l), &xs, |b, xs| {
                b.iter(|| {
                    model
                        .forward(black_box(xs), &ForwardOptions::eval().with_scan(cfg))
                        .unwrap()
                })
            });
        }
        group.bench_with_input(BenchmarkId::new("train+backward", l), &xs, |b, xs| {
            b.iter(|| {
                let (out, tape) = model.forward(black_box(xs), &ForwardOptions::train(0)).unwrap();
                let grad = match out {
                    sharessm::network::ModelOutput::Logits(l) => {
                        sharessm::network::ModelOutput::Logits(l.mapv(|_| 1.0))
                    }
                    other => other,
                };
                model.backward(&tape, &grad).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_forward);
criterion_main!(benches);
