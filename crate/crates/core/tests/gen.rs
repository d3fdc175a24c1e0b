mod common;

use std::collections::BTreeSet;

use apicon_core::exec::{catalog, target};
use apicon_core::gen::{corpus_append, corpus_load, corpus_save, BucketTable, CorpusError};
use apicon_core::solver::{Formula, Slot, VarKind};
use common::{gt_rules, prepare};
use proptest::prelude::*;

#[test]
fn models_are_distinct_and_satisfy_invariants() {
    for t in catalog() {
        let p = prepare(t, &gt_rules(t), 50, 0);
        assert_eq!(p.corpus.len(), 50, "{}: {:?}", t.name, p.stats);
        let distinct: BTreeSet<&Vec<i64>> = p.corpus.entries.iter().map(|e| &e.model).collect();
        assert_eq!(distinct.len(), 50, "{}", t.name);
        let fs: Vec<&Formula> = p.lowered.formulas();
        assert_eq!(p.corpus.first_violation(&p.layout, &fs), None, "{}", t.name);
    }
}

#[test]
fn blocked_values_come_from_the_previous_entry() {
    for t in catalog() {
        let p = prepare(t, &gt_rules(t), 50, 0);
        let mut blocked = 0;
        for w in p.corpus.entries.windows(2) {
            for (name, x) in &w[1].provenance.blocked {
                let v = p.layout.var_by_name(name).unwrap();
                assert_eq!(w[0].model[v], *x, "{}: {name}", t.name);
                assert_ne!(w[1].model[v], *x, "{}: {name}", t.name);
                blocked += 1;
            }
        }
        assert!(blocked > 0, "{}", t.name);
    }
}

#[test]
fn unconstrained_dims_spread_over_buckets() {
    let t = target("argmax").unwrap();
    let p = prepare(t, &gt_rules(t), 50, 0);
    let Some(Slot::Tensor { dims, .. }) = p.layout.slot("input") else { panic!() };
    let table = BucketTable::default();
    for &d in dims {
        let hit: BTreeSet<usize> = p.corpus.entries.iter().filter_map(|e| table.dim_bucket(e.model[d])).collect();
        assert!(hit.len() >= 3, "{}: {hit:?}", p.layout.vars[d].name);
    }
}

#[test]
fn generation_is_reproducible() {
    let t = target("narrow").unwrap();
    let a = prepare(t, &gt_rules(t), 30, 4);
    let b = prepare(t, &gt_rules(t), 30, 4);
    assert_eq!(a.corpus, b.corpus);
}

#[test]
fn corpus_file_round_trip_and_truncation() {
    let t = target("lcm").unwrap();
    let p = prepare(t, &gt_rules(t), 20, 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus/ref/ref.lcm.jsonl");
    corpus_save(&p.corpus, &path).unwrap();
    assert_eq!(corpus_load(&path).unwrap(), p.corpus);

    let mut text = std::fs::read_to_string(&path).unwrap();
    text.truncate(text.len() - 10);
    std::fs::write(&path, text).unwrap();
    match corpus_load(&path) {
        Err(CorpusError::CorruptCorpus { line, recovered, .. }) => {
            assert_eq!(line, 20);
            assert_eq!(recovered.entries[..], p.corpus.entries[..19]);
        }
        other => panic!("{other:?}"),
    }

    corpus_save(&p.corpus, &path).unwrap();
    let mut half = p.corpus.clone();
    half.entries.truncate(10);
    corpus_save(&half, &path).unwrap();
    corpus_append(&half, &p.corpus.entries[10..], &path).unwrap();
    assert_eq!(corpus_load(&path).unwrap(), p.corpus);
}

proptest! {
    #[test]
    fn buckets_partition_the_domain(lo in -3000i64..3000, span in 0i64..5000, kind in 0usize..3) {
        let kind = [VarKind::Int, VarKind::Dim, VarKind::Float][kind];
        let (lo, hi) = if kind == VarKind::Dim { { let a = lo.abs() % 65; (a, (a + span % 65).min(64)) } } else { (lo, lo + span) };
        let b = BucketTable::default().for_var(kind, lo, hi);
        prop_assert!(!b.is_empty());
        for w in b.windows(2) {
            prop_assert!(w[0].1 < w[1].0, "overlap {:?}", w);
        }
        for r in &b {
            prop_assert!(r.0 <= r.1 && r.0 >= lo && r.1 <= hi);
        }
        let covered: i64 = b.iter().map(|r| r.1 - r.0 + 1).sum();
        prop_assert_eq!(covered, hi - lo + 1);
    }
}
