//! Recall and precision of learned invariants against authored ground truth.
//!
//! Both are judged on an evaluation set: an exhaustive small domain of
//! inputs plus random valid inputs. A ground-truth constraint counts as
//! recalled when every input satisfying all learned invariants satisfies it
//! too; a learned invariant is correct when it holds on every valid input.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dsl::TypeExpr;
use crate::eval::{check_on_input, Verdict};
use crate::exec::{rand_tensor, GroundTruth, RefTarget};
use crate::learn::Invariant;
use crate::par;
use crate::value::{ApiInput, ApiSignature, ConcreteValue, DtypeTable};

const DIMS: [u64; 3] = [1, 2, 3];
const MAX_NDIM: usize = 3;
const DTYPES: [u32; 2] = [0, 2];
const INTS: std::ops::RangeInclusive<i64> = -3..=3;

fn shapes() -> Vec<Vec<u64>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..MAX_NDIM {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<u64>| {
                DIMS.iter().map(move |&d| {
                    let mut t = s.clone();
                    t.push(d);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn small_values(ty: &TypeExpr, rng: &mut ChaCha8Rng, table: &DtypeTable) -> Vec<ConcreteValue> {
    match ty {
        TypeExpr::Tensor => shapes()
            .into_iter()
            .flat_map(|s| DTYPES.map(|d| (s.clone(), d)))
            .map(|(s, d)| ConcreteValue::Tensor(rand_tensor(rng, s, d, table)))
            .collect(),
        TypeExpr::Int => INTS.map(ConcreteValue::Int).collect(),
        TypeExpr::Float => [-1.0, 0.0, 0.5, 2.0].map(ConcreteValue::Float).to_vec(),
        TypeExpr::Bool => vec![ConcreteValue::Bool(false), ConcreteValue::Bool(true)],
        TypeExpr::Dtype => (0..table.len() as u32).map(ConcreteValue::Dtype).collect(),
        _ => vec![ConcreteValue::None],
    }
}

/// Every combination of small argument values: ranks up to 3 with dims in
/// {1, 2, 3}, two dtypes, ints in [-3, 3].
pub fn small_domain(sig: &ApiSignature, seed: u64) -> Vec<ApiInput> {
    let table = DtypeTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![ApiInput::new(&sig.api)];
    for p in &sig.params {
        let vals = small_values(&p.ty, &mut rng, &table);
        out = out
            .iter()
            .flat_map(|i| vals.iter().map(move |v| i.clone().with(&p.name, v.clone())))
            .collect();
    }
    out
}

/// Small domain plus `random_valid` seeds drawn from the target.
pub fn evaluation_set(t: &RefTarget, random_valid: usize, seed: u64) -> Vec<ApiInput> {
    let mut out = small_domain(&t.sig, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    out.extend(t.seed_inputs(random_valid, &mut rng));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub recall: f64,
    pub precision: f64,
    /// Per ground-truth constraint.
    pub recalled: Vec<bool>,
    /// Per learned invariant.
    pub correct: Vec<bool>,
    pub inputs: usize,
    pub valid_inputs: usize,
}

fn holds(rule: &crate::dsl::Rule, params: &[String], x: &ApiInput) -> bool {
    check_on_input(rule, params, x) == Verdict::Holds
}

fn ratio(xs: &[bool]) -> f64 {
    if xs.is_empty() {
        1.0
    } else {
        xs.iter().filter(|b| **b).count() as f64 / xs.len() as f64
    }
}

pub fn score(learned: &[Invariant], gt: &[GroundTruth], inputs: &[ApiInput], is_valid: impl Fn(&ApiInput) -> bool + Sync) -> Score {
    // Per input: validity, whether all learned hold, which learned hold, which gt hold.
    let rows = par::map(inputs, |x| {
        let l: Vec<bool> = learned.iter().map(|i| holds(&i.rule.rule, &i.params, x)).collect();
        let g: Vec<bool> = gt.iter().map(|c| holds(&c.rule.rule, &c.params, x)).collect();
        (is_valid(x), l, g)
    });
    let correct: Vec<bool> = (0..learned.len())
        .map(|k| rows.iter().all(|(v, l, _)| !*v || l[k]))
        .collect();
    let recalled: Vec<bool> = (0..gt.len())
        .map(|k| rows.iter().all(|(_, l, g)| !l.iter().all(|b| *b) || g[k]))
        .collect();
    Score {
        recall: ratio(&recalled),
        precision: ratio(&correct),
        recalled,
        correct,
        inputs: inputs.len(),
        valid_inputs: rows.iter().filter(|r| r.0).count(),
    }
}
