mod common;

use apicon_core::eval::Verdict;
use apicon_core::exec::{catalog, target, RefExecutor};
use apicon_core::learn::{learn, refine, LearnConfig};
use apicon_core::solver::Bounds;
use apicon_core::sources::{enumerate_rules, shipped_ruleset};
use common::{gt_rules, seeds};

#[test]
fn kept_invariants_hold_on_every_seed() {
    for t in catalog() {
        let mut rules = enumerate_rules(&t.sig, 3, 40, 2);
        rules.extend(gt_rules(t));
        let s = seeds(t, 117, 1);
        let learned = learn(&rules, &s, &t.sig).unwrap();
        for inv in &learned.invariants {
            assert!(s.iter().all(|x| inv.holds_on(x) == Verdict::Holds), "{}: {inv}", t.name);
        }
        for (inv, witness) in &learned.not_invariant {
            assert_ne!(inv.holds_on(witness), Verdict::Holds);
        }
    }
}

#[test]
fn more_seeds_never_grow_the_learned_set() {
    let t = target("narrow").unwrap();
    let rules = enumerate_rules(&t.sig, 3, 60, 5);
    let s = seeds(t, 40, 2);
    let mut prev = learn(&rules, &s[..1], &t.sig).unwrap().invariants;
    for k in 2..=s.len() {
        let cur = learn(&rules, &s[..k], &t.sig).unwrap().invariants;
        assert!(cur.iter().all(|i| prev.contains(i)), "grew at {k}");
        prev = cur;
    }
}

#[test]
fn learn_and_refine_are_reproducible() {
    let t = target("channel_shuffle").unwrap();
    let mut rules = enumerate_rules(&t.sig, 3, 40, 1);
    rules.extend(gt_rules(t));
    let layout = t.layout(&Bounds::default());
    let run = || {
        let learned = learn(&rules, &seeds(t, 117, 1), &t.sig).unwrap();
        refine(learned, &layout, &mut RefExecutor::new(), &LearnConfig::default()).unwrap().to_json()
    };
    assert_eq!(run(), run());
}

#[test]
fn parallel_and_sequential_learning_agree() {
    let t = target("add_broadcast").unwrap();
    let rules = enumerate_rules(&t.sig, 3, 80, 3);
    let s = seeds(t, 117, 1);
    let a = apicon_core::learn::learn_with(&rules, &s, &t.sig, true).unwrap();
    let b = apicon_core::learn::learn_with(&rules, &s, &t.sig, false).unwrap();
    assert_eq!(a.invariants, b.invariants);
}

#[test]
fn refinement_keeps_validity() {
    let cfg = LearnConfig::default();
    let slack = 1.0 / cfg.trials as f64;
    for t in catalog() {
        let mut rules = enumerate_rules(&t.sig, 3, 40, 9);
        rules.extend(gt_rules(t));
        let layout = t.layout(&Bounds::default());
        let learned = learn(&rules, &seeds(t, 117, 1), &t.sig).unwrap();
        let r = refine(learned, &layout, &mut RefExecutor::new(), &cfg).unwrap();
        assert!(r.v_final >= r.v_orig - slack - 1e-9, "{}: {} -> {}", t.name, r.v_orig, r.v_final);
        assert!(!r.degenerate);
    }
}

#[test]
fn one_broadcast_encoding_survives() {
    let t = target("add_broadcast").unwrap();
    let rules = shipped_ruleset("broadcast.rules").unwrap().typed();
    let names: Vec<&str> = rules.iter().map(|r| r.rule.name.as_str()).collect();
    assert!(names.contains(&"broadcastable") && names.contains(&"compatible_sizes"));
    let layout = t.layout(&Bounds::default());
    let learned = learn(&rules, &seeds(t, 117, 1), &t.sig).unwrap();
    let cfg = LearnConfig::default();
    let r = refine(learned, &layout, &mut RefExecutor::new(), &cfg).unwrap();
    let encodings = r
        .kept
        .iter()
        .filter(|i| matches!(i.rule.rule.name.as_str(), "broadcastable" | "compatible_sizes"))
        .count();
    assert_eq!(encodings, 1, "{:?}", r.kept.iter().map(|i| i.to_string()).collect::<Vec<_>>());
    assert!((r.v_final - r.v_orig).abs() <= 1.0 / cfg.trials as f64);
}
