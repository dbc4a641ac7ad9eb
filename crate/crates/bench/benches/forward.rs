use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use raindrop_bench::fixture;
use raindrop_core::model::{batch_loss, predict_proba, ForwardOptions};
use raindrop_core::Tape;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for m in [6, 12, 24] {
        let (ds, params) = fixture(m, 30);
        group.bench_with_input(BenchmarkId::new("predict_proba", m), &m, |b, _| {
            b.iter(|| predict_proba(black_box(&params), black_box(&ds.samples[0])).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_loss_backward");
    group.sample_size(10);
    let (ds, params) = fixture(6, 30);
    for bs in [8, 32] {
        let batch: Vec<_> = ds.samples.iter().take(bs).collect();
        group.bench_with_input(BenchmarkId::from_parameter(bs), &bs, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape, true);
                let (loss, _, _) =
                    batch_loss(&mut tape, &bound, &params.config, &batch, ForwardOptions::default()).unwrap();
                tape.backward(loss).unwrap();
                black_box(tape.value(loss).data()[0])
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward, train_step);
criterion_main!(benches);
