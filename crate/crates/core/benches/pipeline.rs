use std::hint::black_box;

use apicon_core::exec::{catalog, target};
use apicon_core::learn::learn_with;
use apicon_core::score::{evaluation_set, score};
use apicon_core::sources::{enumerate_rules, shipped_rules};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;

fn learning(c: &mut Criterion) {
    let mut g = c.benchmark_group("learn");
    g.sample_size(10);
    for t in catalog() {
        let mut rules = enumerate_rules(&t.sig, 3, 300, 7);
        rules.extend(shipped_rules());
        let seeds = t.seed_inputs(117, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
        for (mode, parallel) in [("par", true), ("seq", false)] {
            g.bench_with_input(BenchmarkId::new(mode, t.name), &parallel, |b, &p| {
                b.iter(|| learn_with(black_box(&rules), &seeds, &t.sig, p).unwrap())
            });
        }
    }
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let t = target("narrow").unwrap();
    let mut rules = enumerate_rules(&t.sig, 3, 100, 7);
    rules.extend(shipped_rules());
    let seeds = t.seed_inputs(117, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
    let learned = learn_with(&rules, &seeds, &t.sig, true).unwrap().invariants;
    let inputs = evaluation_set(t, 500, 3);
    let gt = t.ground_truth();
    let mut g = c.benchmark_group("score");
    g.sample_size(10);
    g.bench_function("narrow", |b| b.iter(|| score(&learned, &gt, &inputs, |x| t.is_valid(x))));
    g.finish();
}

criterion_group!(benches, learning, scoring);
criterion_main!(benches);
