use criterion::{criterion_group, criterion_main, Criterion};
use polyprobe_core::metrics::{relation_accuracy, relation_consistency, relation_consistency_accuracy, CellGrid};
use std::hint::black_box;

/// Deterministic grid sized like a large relation: 1000 tuples, 10 templates, 8 candidates.
fn grid() -> CellGrid {
    let (tuples, templates, candidates) = (1000usize, 10usize, 8usize);
    let mut x = 0x9e37_79b9_u64;
    let mut next = move || {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        x as usize % candidates
    };
    let predicted = (0..tuples).map(|_| (0..templates).map(|_| next()).collect()).collect();
    let gold = (0..tuples).map(|_| next()).collect();
    CellGrid::new("P", predicted, gold).unwrap()
}

fn bench(c: &mut Criterion) {
    let g = grid();
    c.bench_function("consistency_1000x10", |b| b.iter(|| relation_consistency(black_box(&g))));
    c.bench_function("accuracy_1000x10", |b| b.iter(|| relation_accuracy(black_box(&g))));
    c.bench_function("consistency_accuracy_1000x10", |b| {
        b.iter(|| relation_consistency_accuracy(black_box(&g)))
    });
}

criterion_group!(benches, bench);
criterion_main!(benches);
