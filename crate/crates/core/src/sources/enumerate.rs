//! Grammar-driven rule enumerator.
//!
//! Levels bound the shape of the body:
//! 1. `prop op literal` over a single property,
//! 2. property vs property (optionally offset), and `and`/`or` of atoms,
//! 3. quantifiers over a tensor's dimensions and `if`/`then`/`else`.
//!
//! Rules are produced as text and compiled, so everything returned parses
//! and type-checks.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsl::{compile_rule, TypeExpr, TypedRule};
use crate::value::ApiSignature;

pub const MAX_LEVEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Real,
    Bool,
    Dtype,
}

#[derive(Debug, Clone)]
struct Term {
    text: String,
    kind: Kind,
}

const INT_LITS: [i64; 7] = [-1, 0, 1, 2, 3, 4, 8];
const REAL_LITS: [&str; 4] = ["-1.0", "0.0", "0.5", "1.0"];
const ORD_OPS: [&str; 6] = ["=", "!=", ">", "<", ">=", "<="];
const EQ_OPS: [&str; 2] = ["=", "!="];

fn terms_of(var: &str, ty: &TypeExpr) -> Vec<Term> {
    let t = |text: String, kind| Term { text, kind };
    match ty {
        TypeExpr::Tensor => vec![
            t(format!("ndim({var})"), Kind::Int),
            t(format!("shape({var}, 0)"), Kind::Int),
            t(format!("shape({var}, 1)"), Kind::Int),
            t(format!("shape({var}, -1)"), Kind::Int),
            t(format!("dtype_({var})"), Kind::Dtype),
            t(format!("min({var})"), Kind::Real),
            t(format!("max({var})"), Kind::Real),
        ],
        TypeExpr::Int => vec![t(var.to_string(), Kind::Int)],
        TypeExpr::Float => vec![t(var.to_string(), Kind::Real)],
        TypeExpr::Bool => vec![t(var.to_string(), Kind::Bool)],
        TypeExpr::Dtype => vec![t(var.to_string(), Kind::Dtype)],
        TypeExpr::List(e) | TypeExpr::Tuple(e) => {
            let mut v = vec![t(format!("{var}.len"), Kind::Int)];
            match **e {
                TypeExpr::Int => v.push(t(format!("{var}[0]"), Kind::Int)),
                TypeExpr::Float => v.push(t(format!("{var}[0]"), Kind::Real)),
                _ => {}
            }
            v
        }
        TypeExpr::Str | TypeExpr::Union(..) => Vec::new(),
    }
}

fn numeric(k: Kind) -> bool {
    matches!(k, Kind::Int | Kind::Real)
}

fn comparable(a: Kind, b: Kind) -> bool {
    (numeric(a) && numeric(b)) || a == b
}

fn ops_for(k: Kind) -> &'static [&'static str] {
    match k {
        Kind::Int | Kind::Real => &ORD_OPS,
        Kind::Bool | Kind::Dtype => &EQ_OPS,
    }
}

fn literal(rng: &mut ChaCha8Rng, k: Kind) -> String {
    match k {
        Kind::Int => INT_LITS.choose(rng).unwrap().to_string(),
        Kind::Real => REAL_LITS.choose(rng).unwrap().to_string(),
        Kind::Bool => if rng.gen() { "true" } else { "false" }.to_string(),
        Kind::Dtype => rng.gen_range(0..6).to_string(),
    }
}

struct Binder<'a> {
    names: Vec<String>,
    types: Vec<&'a TypeExpr>,
}

impl Binder<'_> {
    fn header(&self) -> String {
        let parts: Vec<String> = self
            .names
            .iter()
            .zip(&self.types)
            .map(|(n, t)| format!("{n}: {t}"))
            .collect();
        format!("{{{}}}", parts.join(", "))
    }

    fn terms(&self, i: usize) -> Vec<Term> {
        terms_of(&self.names[i], self.types[i])
    }

    fn tensors(&self) -> Vec<usize> {
        (0..self.types.len())
            .filter(|&i| *self.types[i] == TypeExpr::Tensor)
            .collect()
    }
}

fn atom(rng: &mut ChaCha8Rng, terms: &[Term]) -> String {
    let t = terms.choose(rng).unwrap();
    let op = ops_for(t.kind).choose(rng).unwrap();
    format!("{} {op} {}", t.text, literal(rng, t.kind))
}

/// Comparison between a term from `ta` and a term from `tb`.
fn relation(rng: &mut ChaCha8Rng, ta: &[Term], tb: &[Term]) -> Option<String> {
    let pairs: Vec<(&Term, &Term)> = ta
        .iter()
        .flat_map(|x| tb.iter().map(move |y| (x, y)))
        .filter(|(x, y)| comparable(x.kind, y.kind) && x.text != y.text)
        .collect();
    let (x, y) = *pairs.choose(rng)?;
    let kind = if x.kind == y.kind { x.kind } else { Kind::Real };
    let op = ops_for(kind).choose(rng).unwrap();
    let lhs = if numeric(x.kind) && rng.gen_bool(0.3) {
        let d = rng.gen_range(1..=2);
        if rng.gen() {
            format!("{} + {d}", x.text)
        } else {
            format!("{} - {d}", x.text)
        }
    } else {
        x.text.clone()
    };
    Some(format!("{lhs} {op} {}", y.text))
}

fn level1(rng: &mut ChaCha8Rng, b: &Binder) -> Option<String> {
    Some(atom(rng, &b.terms(0)))
}

fn level2(rng: &mut ChaCha8Rng, b: &Binder) -> Option<String> {
    let k = b.names.len();
    let t0 = b.terms(0);
    let other = if k > 1 { b.terms(1) } else { t0.clone() };
    match rng.gen_range(0..3) {
        0 => relation(rng, &t0, &other),
        1 => Some(format!("{} and {}", atom(rng, &t0), atom(rng, &other))),
        _ => Some(format!("{} or {}", atom(rng, &t0), atom(rng, &other))),
    }
}

fn level3(rng: &mut ChaCha8Rng, b: &Binder) -> Option<String> {
    let tensors = b.tensors();
    if !tensors.is_empty() && rng.gen_bool(0.6) {
        let t = &b.names[*tensors.choose(rng).unwrap()];
        let q = if rng.gen() { "forall" } else { "exists" };
        let op = ORD_OPS.choose(rng).unwrap();
        let others: Vec<usize> = (0..b.names.len()).filter(|&i| b.names[i] != *t).collect();
        let rhs = match others.first() {
            Some(&o) if *b.types[o] == TypeExpr::Tensor => format!("shape({}, i)", b.names[o]),
            Some(&o) => {
                let ints: Vec<Term> = b.terms(o).into_iter().filter(|x| numeric(x.kind)).collect();
                ints.choose(rng)?.text.clone()
            }
            None => INT_LITS.choose(rng).unwrap().to_string(),
        };
        return Some(format!("{q} i in [0, ndim({t}) - 1] : shape({t}, i) {op} {rhs}"));
    }
    let k = b.names.len();
    let t0 = b.terms(0);
    let other = if k > 1 { b.terms(1) } else { t0.clone() };
    let cond = atom(rng, &t0);
    let then = atom(rng, &other);
    if rng.gen() {
        Some(format!("if {cond} then {then} else {}", atom(rng, &other)))
    } else {
        Some(format!("if {cond} then {then}"))
    }
}

/// Up to `count` distinct well-typed rules over the parameter types of
/// `sig`, deterministic in `seed`. Levels above 3 are treated as 3. Fewer
/// than `count` rules come back when the space at `max_depth` is smaller.
pub fn enumerate_rules(sig: &ApiSignature, max_depth: usize, count: usize, seed: u64) -> Vec<TypedRule> {
    let max_level = max_depth.clamp(1, MAX_LEVEL);
    let params: Vec<&TypeExpr> = sig
        .params
        .iter()
        .map(|p| &p.ty)
        .filter(|t| !terms_of("v", t).is_empty())
        .collect();
    if params.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let attempts = count.saturating_mul(200).max(1000);
    for _ in 0..attempts {
        if out.len() >= count {
            break;
        }
        let level = rng.gen_range(1..=max_level);
        let k = if level == 1 { 1 } else { rng.gen_range(1..=params.len().min(2)) };
        let mut idx: Vec<usize> = (0..params.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(k);
        idx.sort_unstable();
        let binder = Binder {
            names: (1..=k).map(|i| format!("v_{i}")).collect(),
            types: idx.iter().map(|&i| params[i]).collect(),
        };
        let body = match level {
            1 => level1(&mut rng, &binder),
            2 => level2(&mut rng, &binder),
            _ => level3(&mut rng, &binder),
        };
        let Some(body) = body else { continue };
        let text = format!("{} |= {body}", binder.header());
        let Ok(mut typed) = compile_rule(&text) else {
            continue;
        };
        if !typed.rule.unused_bindings().is_empty() || !seen.insert(typed.rule.clone()) {
            continue;
        }
        typed.rule.name = format!("enum_{}", out.len());
        typed.rule.description = format!("enumerated, level {level}");
        out.push(typed);
    }
    out
}
