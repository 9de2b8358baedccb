use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use liveseq_bench::{load, merge_source, FIBONACCI, LOOPED_MELODY};
use liveseq_core::{next_element, next_item, parse_module, Budget};

fn extraction(c: &mut Criterion) {
    let p = load(LOOPED_MELODY);
    c.bench_function("melody_1000_items", |b| {
        b.iter_batched(
            || p.entry_term("Main", "main").unwrap(),
            |mut t| {
                for _ in 0..1000 {
                    next_item(&p, &mut t, Budget::default()).unwrap().unwrap();
                }
                t
            },
            BatchSize::SmallInput,
        )
    });

    let p = load(&merge_source(50));
    c.bench_function("merge_two_voices", |b| {
        b.iter_batched(
            || p.entry_term("Main", "main").unwrap(),
            |mut t| {
                while next_item(&p, &mut t, Budget::default()).unwrap().is_some() {}
                t
            },
            BatchSize::SmallInput,
        )
    });

    let p = load(FIBONACCI);
    c.bench_function("fibonacci_20_elements", |b| {
        b.iter_batched(
            || p.entry_term("Main", "main").unwrap(),
            |mut t| {
                for _ in 0..20 {
                    next_element(&p, &mut t, Budget::default()).unwrap().unwrap();
                }
                t
            },
            BatchSize::SmallInput,
        )
    });
}

fn loading(c: &mut Criterion) {
    c.bench_function("parse_and_load", |b| {
        b.iter(|| {
            let m = parse_module(LOOPED_MELODY, "Main").unwrap();
            liveseq_core::Program::with_prelude(vec![m]).unwrap()
        })
    });
}

criterion_group!(benches, extraction, loading);
criterion_main!(benches);
