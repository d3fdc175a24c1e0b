//! Mining invariants from valid seed inputs and pruning them by validity
//! ratio.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde_json::{json, Value};

use crate::concretize::{concretize, Recheck};
use crate::dsl::ruleset::describe_error;
use crate::dsl::{compile_rule, render_rule, TypeExpr, TypedRule};
use crate::eval::{check_on_input, EvalError, Verdict};
use crate::exec::{ExecError, ExecRequest, Executor};
use crate::gen::{BucketTable, Sampler};
use crate::solver::{lower_rule, solve_layout, Formula, Layout, LowerError, SolveResult, SolverConfig};
use crate::value::{ApiInput, ApiSignature};

/// Tuples kept per rule when enumeration explodes.
pub const MAX_CANDIDATES: usize = 512;

/// A rule bound to an ordered tuple of API parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Invariant {
    pub rule: TypedRule,
    pub params: Vec<String>,
}

impl Invariant {
    pub fn new(rule: TypedRule, params: &[&str]) -> Invariant {
        Invariant {
            rule,
            params: params.iter().map(|p| p.to_string()).collect(),
        }
    }

    pub fn holds_on(&self, input: &ApiInput) -> Verdict {
        check_on_input(&self.rule.rule, &self.params, input)
    }

    pub fn to_json(&self) -> Value {
        json!({"name": self.rule.rule.name, "rule": render_rule(&self.rule.rule), "params": self.params})
    }

    pub fn from_json(v: &Value) -> Result<Invariant, String> {
        let text = v.get("rule").and_then(Value::as_str).ok_or("invariant without 'rule'")?;
        let mut rule = compile_rule(text).map_err(|e| format!("{text}: {}", describe_error(&e)))?;
        if let Some(name) = v.get("name").and_then(Value::as_str) {
            rule.rule.name = name.to_string();
        }
        let params = v
            .get("params")
            .and_then(Value::as_array)
            .ok_or("invariant without 'params'")?
            .iter()
            .map(|p| p.as_str().map(String::from).ok_or("non-string param"))
            .collect::<Result<Vec<_>, _>>()?;
        if params.len() != rule.rule.bindings.len() {
            return Err(format!("{text}: {} params for {} bindings", params.len(), rule.rule.bindings.len()));
        }
        Ok(Invariant { rule, params })
    }
}

impl std::fmt::Display for Invariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} @ ({})", render_rule(&self.rule.rule), self.params.join(", "))
    }
}

fn compatible(binding: &TypeExpr, param: &TypeExpr) -> bool {
    binding == param
}

/// Ordered tuples of distinct, type-compatible parameters, in lexicographic
/// order of signature positions. The second value reports whether the
/// enumeration was cut at [`MAX_CANDIDATES`].
pub fn enumerate_candidates_capped(rule: &TypedRule, sig: &ApiSignature) -> (Vec<Vec<String>>, bool) {
    let options: Vec<Vec<usize>> = rule
        .rule
        .bindings
        .iter()
        .map(|b| {
            (0..sig.params.len())
                .filter(|&i| compatible(&b.ty, &sig.params[i].ty))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(options.len());
    let capped = !extend(&options, &mut cur, &mut out);
    let tuples = out
        .into_iter()
        .map(|t: Vec<usize>| t.into_iter().map(|i| sig.params[i].name.clone()).collect())
        .collect();
    (tuples, capped)
}

/// Depth-first product; false once the cap is reached.
fn extend(options: &[Vec<usize>], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) -> bool {
    if cur.len() == options.len() {
        if out.len() == MAX_CANDIDATES {
            return false;
        }
        out.push(cur.clone());
        return true;
    }
    for &i in &options[cur.len()] {
        if cur.contains(&i) {
            continue;
        }
        cur.push(i);
        let more = extend(options, cur, out);
        cur.pop();
        if !more {
            return false;
        }
    }
    true
}

pub fn enumerate_candidates(rule: &TypedRule, sig: &ApiSignature) -> Vec<Vec<String>> {
    enumerate_candidates_capped(rule, sig).0
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LearnError {
    #[error("no seed inputs")]
    EmptySeedSet,
}

/// Outcome of the mining step, before refinement.
#[derive(Debug, Clone, Default)]
pub struct Learned {
    pub invariants: Vec<Invariant>,
    pub not_invariant: Vec<(Invariant, ApiInput)>,
    pub eval_error: Vec<(Invariant, EvalError)>,
    /// Rules whose candidate tuples were cut.
    pub capped: Vec<String>,
}

enum Check {
    Holds,
    Fails(ApiInput),
    Errors(EvalError),
}

fn check_all(inv: &Invariant, seeds: &[ApiInput]) -> Check {
    for s in seeds {
        match inv.holds_on(s) {
            Verdict::Holds => {}
            Verdict::Fails => return Check::Fails(s.clone()),
            Verdict::Errors(e) => return Check::Errors(e),
        }
    }
    Check::Holds
}

/// Keep every candidate that holds on all seeds; record why the others fail.
pub fn learn(rules: &[TypedRule], seeds: &[ApiInput], sig: &ApiSignature) -> Result<Learned, LearnError> {
    learn_with(rules, seeds, sig, true)
}

/// As [`learn`], choosing the parallel or sequential map explicitly.
pub fn learn_with(
    rules: &[TypedRule],
    seeds: &[ApiInput],
    sig: &ApiSignature,
    parallel: bool,
) -> Result<Learned, LearnError> {
    if seeds.is_empty() {
        return Err(LearnError::EmptySeedSet);
    }
    let mut out = Learned::default();
    let mut cands = Vec::new();
    for r in rules {
        let (tuples, capped) = enumerate_candidates_capped(r, sig);
        if capped {
            out.capped.push(render_rule(&r.rule));
        }
        cands.extend(tuples.into_iter().map(|params| Invariant {
            rule: r.clone(),
            params,
        }));
    }
    let checks = if parallel {
        crate::par::map(&cands, |c| check_all(c, seeds))
    } else {
        crate::par::map_seq(&cands, |c| check_all(c, seeds))
    };
    for (c, r) in cands.into_iter().zip(checks) {
        match r {
            Check::Holds => out.invariants.push(c),
            Check::Fails(x) => out.not_invariant.push((c, x)),
            Check::Errors(e) => out.eval_error.push((c, e)),
        }
    }
    Ok(out)
}

pub fn learn_invariants(rules: &[TypedRule], seeds: &[ApiInput], sig: &ApiSignature) -> Result<Vec<Invariant>, LearnError> {
    Ok(learn(rules, seeds, sig)?.invariants)
}

#[derive(Debug, Clone)]
pub struct LoweredInvariant {
    pub inv: Invariant,
    pub formula: Formula,
    pub approximate: bool,
}

/// Lowered invariants, and those the solver cannot represent.
#[derive(Debug, Clone, Default)]
pub struct LoweredSet {
    pub items: Vec<LoweredInvariant>,
    pub excluded: Vec<(Invariant, LowerError)>,
}

impl LoweredSet {
    pub fn formulas(&self) -> Vec<&Formula> {
        self.items.iter().map(|l| &l.formula).collect()
    }

    pub fn rechecks(&self) -> Vec<Recheck<'_>> {
        self.items
            .iter()
            .filter(|l| l.approximate)
            .map(|l| Recheck {
                rule: &l.inv.rule.rule,
                params: &l.inv.params,
            })
            .collect()
    }
}

pub fn lower_invariants(invs: &[Invariant], layout: &Layout) -> LoweredSet {
    let mut out = LoweredSet::default();
    for inv in invs {
        match lower_rule(&inv.rule, &inv.params, layout) {
            Ok(l) => out.items.push(LoweredInvariant {
                inv: inv.clone(),
                formula: l.formula,
                approximate: l.approximate,
            }),
            Err(e) => out.excluded.push((inv.clone(), e)),
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct LearnConfig {
    pub trials: usize,
    pub seed: u64,
    pub min_seed_inputs: usize,
    pub backend: String,
    pub solver_nodes: usize,
    /// Sampling ratio of the trial generator.
    pub p: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            trials: 30,
            seed: 0,
            min_seed_inputs: 20,
            backend: "cpu".into(),
            solver_nodes: SolverConfig::default().node_limit,
            p: 0.3,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LearnReport {
    pub kept: Vec<Invariant>,
    pub dropped_redundant: Vec<Invariant>,
    pub dropped_not_invariant: Vec<(Invariant, ApiInput)>,
    pub dropped_eval_error: Vec<(Invariant, EvalError)>,
    /// Invariants the solver cannot represent; not refined, not generated from.
    pub excluded_unlowerable: Vec<(Invariant, LowerError)>,
    pub v_orig: f64,
    pub v_final: f64,
    /// v_orig was zero, so nothing was pruned.
    pub degenerate: bool,
    pub capped: Vec<String>,
}

impl LearnReport {
    pub fn to_json(&self) -> Value {
        let invs = |xs: &[Invariant]| Value::Array(xs.iter().map(Invariant::to_json).collect());
        json!({
            "kept": invs(&self.kept),
            "dropped_redundant": invs(&self.dropped_redundant),
            "dropped_not_invariant": self.dropped_not_invariant.iter().map(|(i, x)| {
                json!({"invariant": i.to_json(), "counterexample": crate::value::encode_input(x)})
            }).collect::<Vec<_>>(),
            "dropped_eval_error": self.dropped_eval_error.iter().map(|(i, e)| {
                json!({"invariant": i.to_json(), "error": e.to_string()})
            }).collect::<Vec<_>>(),
            "excluded_unlowerable": self.excluded_unlowerable.iter().map(|(i, e)| {
                json!({"invariant": i.to_json(), "error": e.to_string()})
            }).collect::<Vec<_>>(),
            "v_orig": self.v_orig,
            "v_final": self.v_final,
            "degenerate": self.degenerate,
            "capped": self.capped,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("the learned invariants are unsatisfiable together")]
    SolverUnsat,
    #[error(transparent)]
    Executor(#[from] ExecError),
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut h = DefaultHasher::new();
    (a, b).hash(&mut h);
    h.finish()
}

/// Number of valid inputs among `trials` generated models under `formulas`.
/// Models come from the same diversified sampler as corpus generation.
#[allow(clippy::too_many_arguments)]
pub fn valid_count(
    layout: &Layout,
    formulas: &[&Formula],
    rechecks: &[Recheck],
    ex: &mut dyn Executor,
    cfg: &LearnConfig,
    seed: u64,
) -> Result<usize, ExecError> {
    let mut sampler = Sampler::new(layout, formulas, &BucketTable::default(), cfg.p, seed, cfg.solver_nodes);
    let trials = cfg.trials.max(1);
    let mut valid = 0;
    let mut done = 0;
    for t in 0..trials * 4 {
        if done == trials {
            break;
        }
        // draws that fail to solve or concretize are redrawn; the ratio is over inputs
        let SolveResult::Sat(m) = sampler.draw(formulas, t).0 else {
            continue;
        };
        let Ok(input) = concretize(&m, layout, rechecks, sampler.rng()) else {
            continue;
        };
        done += 1;
        let req = ExecRequest {
            id: t as u64,
            api: layout.api.clone(),
            backend: cfg.backend.clone(),
            input,
            want_outputs: false,
        };
        if ex.run(&req)?.is_ok() {
            valid += 1;
            sampler.store.record(&m);
        }
    }
    Ok(valid)
}

/// Leave-one-out pruning: an invariant is kept only if dropping it (together
/// with those already found redundant) lowers the validity count.
pub fn refine(
    learned: Learned,
    layout: &Layout,
    ex: &mut dyn Executor,
    cfg: &LearnConfig,
) -> Result<LearnReport, RefineError> {
    let lowered = lower_invariants(&learned.invariants, layout);
    let mut report = LearnReport {
        dropped_not_invariant: learned.not_invariant,
        dropped_eval_error: learned.eval_error,
        excluded_unlowerable: lowered.excluded.clone(),
        capped: learned.capped,
        ..Default::default()
    };
    let all = lowered.formulas();
    let probe = SolverConfig {
        node_limit: cfg.solver_nodes,
        seed: cfg.seed,
    };
    if solve_layout(layout, &all, &probe) == SolveResult::Unsat {
        return Err(RefineError::SolverUnsat);
    }
    let trials = cfg.trials.max(1);
    let rechecks = lowered.rechecks();
    let v_orig = valid_count(layout, &all, &rechecks, ex, cfg, cfg.seed)?;
    report.v_orig = v_orig as f64 / trials as f64;
    if v_orig == 0 {
        log::warn!("{}: zero validity under the learned invariants; keeping all", layout.api);
        report.degenerate = true;
        report.kept = lowered.items.iter().map(|l| l.inv.clone()).collect();
        return Ok(report);
    }
    let mut redundant = vec![false; lowered.items.len()];
    for i in 0..lowered.items.len() {
        let rest: Vec<usize> = (0..lowered.items.len())
            .filter(|&j| j != i && !redundant[j])
            .collect();
        let fs: Vec<&Formula> = rest.iter().map(|&j| &lowered.items[j].formula).collect();
        let rc: Vec<Recheck> = rest
            .iter()
            .filter(|&&j| lowered.items[j].approximate)
            .map(|&j| Recheck {
                rule: &lowered.items[j].inv.rule.rule,
                params: &lowered.items[j].inv.params,
            })
            .collect();
        let seed = mix(cfg.seed, i as u64 + 1);
        let v_test = valid_count(layout, &fs, &rc, ex, cfg, seed)?;
        if v_test < v_orig {
            report.kept.push(lowered.items[i].inv.clone());
        } else {
            redundant[i] = true;
            report.dropped_redundant.push(lowered.items[i].inv.clone());
        }
    }
    let kept = lower_invariants(&report.kept, layout);
    let v_final = valid_count(layout, &kept.formulas(), &kept.rechecks(), ex, cfg, mix(cfg.seed, u64::MAX))?;
    report.v_final = v_final as f64 / trials as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::compile_rule;

    fn sig(params: &[(&str, TypeExpr)]) -> ApiSignature {
        let ps: Vec<(&str, TypeExpr, bool)> = params.iter().map(|(n, t)| (*n, t.clone(), true)).collect();
        ApiSignature::new("t", &ps)
    }

    #[test]
    fn candidates_are_distinct_permutations() {
        let r = compile_rule("{v_1: tensor, v_2: tensor} |= ndim(v_1) = ndim(v_2)").unwrap();
        let s = sig(&[("input", TypeExpr::Tensor), ("other", TypeExpr::Tensor)]);
        assert_eq!(
            enumerate_candidates(&r, &s),
            vec![vec!["input".to_string(), "other".into()], vec!["other".into(), "input".into()]]
        );
        let r1 = compile_rule("{v_1: tensor} |= ndim(v_1) = 1").unwrap();
        let s1 = sig(&[("input", TypeExpr::Tensor), ("alpha", TypeExpr::Float)]);
        assert_eq!(enumerate_candidates(&r1, &s1), vec![vec!["input".to_string()]]);
        let r2 = compile_rule("{v_1: tensor, v_2: int} |= ndim(v_1) = v_2").unwrap();
        assert!(enumerate_candidates(&r2, &s1).is_empty());
    }

    #[test]
    fn cap_applies() {
        let r = compile_rule("{a: int, b: int, c: int, d: int} |= a + b + c + d > 0").unwrap();
        let names: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let ps: Vec<(&str, TypeExpr)> = names.iter().map(|n| (n.as_str(), TypeExpr::Int)).collect();
        let (t, capped) = enumerate_candidates_capped(&r, &sig(&ps));
        assert!(capped);
        assert_eq!(t.len(), MAX_CANDIDATES);
        assert_eq!(t[0], vec!["p0", "p1", "p2", "p3"]);
    }
}
