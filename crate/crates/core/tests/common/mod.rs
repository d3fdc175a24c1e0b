#![allow(dead_code)]

use apicon_core::dsl::TypeErrorKind;

/// Ill-typed rules with the error kind each must be rejected with.
pub fn negative_typing_cases() -> Vec<(&'static str, TypeErrorKind)> {
    use TypeErrorKind::*;
    vec![
        ("{v_1: tensor} |= v_1 > 0", NotPrimitive),
        ("{v_1: list(int)} |= v_1 = 2", NotPrimitive),
        ("{v_1: int|tensor} |= true", InvalidUnion),
        ("{v_1: list(list(int))} |= v_1.len > 0", NestedSequence),
        ("{v_1: int} |= v_1[0] > 1", NotSequence),
        ("{v_1: tensor} |= v_1.len = 1", NotSequence),
        ("{v_1: list(int)} |= v_1[1.5] > 0", IndexNotInt),
        ("{v_1: int} |= ndim(v_1) = 1", NotTensor),
        ("{v_1: list(int)} |= dtype_(v_1) = 0", NotTensor),
        ("{v_1: tensor} |= shape(v_1, true) = 1", IndexNotInt),
        ("{v_1: bool} |= v_1 + 1 > 0", NotNumeric),
        ("{v_1: tensor} |= ndim(v_1) = true", Incomparable),
        ("{v_1: int} |= v_1 = \"a\"", StringMisuse),
        ("{v_1: tensor} |= ndim(v_1) and true", NotBool),
        ("{v_1: tensor} |= forall i in [0, 1.5] : shape(v_1, i) > 0", IndexNotInt),
        ("{v_1: tensor} |= (if ndim(v_1) > 1 then 3) = 3", MissingElse),
        ("{v_1: tensor} |= (if ndim(v_1) > 1 then 3 else true) = 3", BranchMismatch),
        ("{v_1: tensor} |= ndim(v_1) + 1", NotBool),
    ]
}

use apicon_core::dsl::TypedRule;
use apicon_core::exec::{RefExecutor, RefTarget};
use apicon_core::gen::{generate_abstract_inputs, BucketTable, Corpus, GenConfig, GenStats};
use apicon_core::learn::{learn, lower_invariants, refine, LearnConfig, LearnReport, LoweredSet};
use apicon_core::solver::{Bounds, Layout};
use apicon_core::value::ApiInput;
use rand::SeedableRng;

pub fn seeds(t: &RefTarget, n: usize, seed: u64) -> Vec<ApiInput> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    t.seed_inputs(n, &mut rng)
}

pub fn gt_rules(t: &RefTarget) -> Vec<TypedRule> {
    t.ground_truth().into_iter().map(|g| g.rule).collect()
}

pub struct Prepared {
    pub layout: Layout,
    pub report: LearnReport,
    pub lowered: LoweredSet,
    pub corpus: Corpus,
    pub stats: GenStats,
}

/// Learn from 117 seeds, refine, and generate an `n`-entry corpus.
pub fn prepare(t: &RefTarget, rules: &[TypedRule], n: usize, seed: u64) -> Prepared {
    let layout = t.layout(&Bounds::default());
    let learned = learn(rules, &seeds(t, 117, 1), &t.sig).unwrap();
    let mut ex = RefExecutor::new();
    let cfg = LearnConfig { seed, ..Default::default() };
    let report = refine(learned, &layout, &mut ex, &cfg).unwrap();
    let lowered = lower_invariants(&report.kept, &layout);
    let gcfg = GenConfig { n, seed, ..Default::default() };
    let (corpus, stats) = generate_abstract_inputs(&lowered, &layout, &BucketTable::default(), &mut ex, &gcfg).unwrap();
    Prepared { layout, report, lowered, corpus, stats }
}
