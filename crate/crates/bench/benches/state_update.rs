use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mimn_bench::{history, params, warm_store};
use mimn_core::model::ItemKey;

fn fold(c: &mut Criterion) {
    let p = params();
    let mut group = c.benchmark_group("process_sequence");
    for len in [10, 100, 1000] {
        let seq = history(len, 3);
        group.bench_with_input(BenchmarkId::from_parameter(len), &seq, |b, seq| {
            b.iter(|| p.process_sequence(seq).unwrap())
        });
    }
    group.finish();
}

fn apply(c: &mut Criterion) {
    let p = params();
    let store = warm_store(&p, 100, 100);
    let key = ItemKey::new(17, 17);
    c.bench_function("apply_key", |b| {
        let mut u = 0;
        b.iter(|| {
            u = (u + 1) % 100;
            store.apply_key(&format!("u{u}"), key).unwrap()
        })
    });
    c.bench_function("snapshot_100_users", |b| {
        b.iter(|| store.snapshot().unwrap())
    });
}

criterion_group!(benches, fold, apply);
criterion_main!(benches);
