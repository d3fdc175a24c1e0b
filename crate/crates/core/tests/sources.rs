mod common;

use std::time::Duration;

use apicon_core::dsl::{parse_rule, render_rule};
use apicon_core::exec::{catalog, target, ExecError, ExecRequest, ExecResult, ExecStatus, Executor, RefExecutor};
use apicon_core::sources::llm::{ManualClock, ScriptedModel, StopReason, WallClock};
use apicon_core::sources::mutate::random_input;
use apicon_core::sources::{
    collect_errors, enumerate_rules, generate_rules_llm, load_ruleset, shipped_ruleset, CollectConfig, ErrorDb,
    FeedbackKind, LlmLimits, Mutator, PromptContext,
};
use apicon_core::value::{decode_input, encode_input, ApiInput, ConcreteValue, DtypeTable};
use common::seeds;
use proptest::prelude::*;
use rand::SeedableRng;

const DIM_VALID: &str = "{v_1: tensor, v_2: int} |= -1 * ndim(v_1) <= v_2 and v_2 <= ndim(v_1) - 1";

fn ctx() -> PromptContext {
    let t = target("argmax").unwrap();
    PromptContext::new(&t.sig, t.doc, &["dim out of range".into()])
}

fn script(turns: &[&str]) -> ScriptedModel {
    ScriptedModel::new(turns.iter().map(|s| s.to_string()).collect())
}

#[test]
fn rule_then_garbage() {
    let mut m = script(&[DIM_VALID, "{v_1: tensor} |= ndim(v_1) >"]);
    let out = generate_rules_llm(&mut m, &ctx(), LlmLimits::default(), &WallClock::start());
    assert_eq!(out.rules.len(), 1);
    assert_eq!(out.feedback_kinds(), vec![FeedbackKind::Success, FeedbackKind::ParsingError]);
    assert!(matches!(out.stop, StopReason::Endpoint(_)));
    assert!(m.prompts[1].contains("Success") && m.prompts[2].contains("ParsingError"));
}

#[test]
fn five_kinds_in_order() {
    let mut m = script(&[
        "I think the dim must be valid.",
        "{v_1: tensor, v_2: int} |= ndim(v_1) >= 1",
        DIM_VALID,
        DIM_VALID,
        "{v_1: tensor |= ndim(v_1) = 1",
    ]);
    let out = generate_rules_llm(&mut m, &ctx(), LlmLimits::default(), &WallClock::start());
    use FeedbackKind::*;
    assert_eq!(
        out.feedback_kinds(),
        vec![FormatError, RedundantBindings, Success, DuplicateRule, ParsingError]
    );
    assert_eq!(out.failures, 4);
    assert_eq!(out.rules.len(), 1);
}

#[test]
fn multi_rule_turns() {
    let turn = format!("```\n{DIM_VALID}\n{{v_1: tensor}} |= ndim(v_1) >= 1\n{DIM_VALID}\n```");
    let mut m = script(&[&turn]);
    let out = generate_rules_llm(&mut m, &ctx(), LlmLimits::default(), &WallClock::start());
    use FeedbackKind::*;
    assert_eq!(out.feedback_kinds(), vec![Success, Success, DuplicateRule]);
    assert_eq!(out.rules.len(), 2);
}

#[test]
fn failure_bound() {
    let mut m = ScriptedModel::from_fn(|_, _| Some("{v_1: int} |= v_1 >".into()));
    let out = generate_rules_llm(&mut m, &ctx(), LlmLimits::default(), &WallClock::start());
    assert_eq!(out.stop, StopReason::FailureBound);
    assert_eq!(out.failures, 100);
    assert_eq!(out.turns.len(), 100);
}

#[test]
fn timeout_with_five_rules_per_turn() {
    let t = target("narrow").unwrap();
    let pool: Vec<String> = enumerate_rules(&t.sig, 3, 2000, 0).iter().map(|r| render_rule(&r.rule)).collect();
    let clock = ManualClock::default();
    let mut m = ScriptedModel::from_fn(move |i, _| Some(pool[i * 5..i * 5 + 5].join("\n")))
        .with_clock(clock.clone(), Duration::from_millis(1500));
    let ctx = PromptContext::new(&t.sig, t.doc, &[]);
    let out = generate_rules_llm(&mut m, &ctx, LlmLimits::default(), &clock);
    assert_eq!(out.stop, StopReason::Timeout);
    assert_eq!(out.turns.len(), 40);
    assert!(out.rules.len() >= 20, "{}", out.rules.len());
}

#[test]
fn enumerator_contract() {
    for t in catalog() {
        let a = enumerate_rules(&t.sig, 3, 50, 11);
        assert_eq!(a.len(), 50, "{}", t.name);
        assert_eq!(a, enumerate_rules(&t.sig, 3, 50, 11));
        for r in &a {
            assert!(r.rule.unused_bindings().is_empty());
            assert_eq!(parse_rule(&render_rule(&r.rule)).unwrap(), r.rule);
        }
    }
}

#[test]
fn ruleset_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("five.rules");
    let mut text = String::new();
    for (i, body) in ["ndim(v_1) >= 1", "ndim(v_1) <= 4", "shape(v_1) = 1", "dtype_(v_1) = 0", "min(v_1) >= 0"].iter().enumerate() {
        text.push_str(&format!("# name: r{i}\n{{v_1: tensor}} |= {body}\n\n"));
    }
    std::fs::write(&path, text).unwrap();
    let rs = load_ruleset(&path).unwrap();
    assert_eq!(rs.rules.len(), 4);
    assert_eq!(rs.errors.len(), 1);
    assert_eq!(rs.errors[0].line, 8);
    std::fs::write(&path, "").unwrap();
    let rs = load_ruleset(&path).unwrap();
    assert!(rs.rules.is_empty() && rs.errors.is_empty());
    assert!(load_ruleset(&dir.path().join("missing.rules")).is_err());
    let b = shipped_ruleset("broadcast.rules").unwrap();
    let names: Vec<&str> = b.rules.iter().map(|r| r.rule.rule.name.as_str()).collect();
    assert_eq!(names, ["broadcastable", "compatible_sizes", "dim_valid", "same_dtype"]);
}

#[test]
fn rank_up_mismatch_is_collected() {
    let t = target("add_broadcast").unwrap();
    let mut ex = RefExecutor::new();
    let cfg = CollectConfig { max_random: Some(200), ..Default::default() };
    let entry = collect_errors(&t.sig, &seeds(t, 20, 1), &Mutator::ALL, &mut ex, &cfg).unwrap();
    assert!(entry.messages.iter().any(|m| m.contains("sizes must be equal or 1")), "{:?}", entry.messages);
    let mut db = ErrorDb::new("ref");
    db.merge(&t.api, &entry);
    assert_eq!(db.messages(&t.api).len(), entry.messages.len());
}

#[test]
fn identical_messages_collapse() {
    let t = target("matmul2d").unwrap();
    let mut ex = RefExecutor::new();
    let cfg = CollectConfig { max_random: Some(0), ..Default::default() };
    let entry = collect_errors(&t.sig, &seeds(t, 10, 1), &[Mutator::RankUp], &mut ex, &cfg).unwrap();
    assert_eq!(entry.messages.len(), 2, "{:?}", entry.messages);
}

struct AlwaysOk;

impl Executor for AlwaysOk {
    fn apis(&self) -> Vec<String> {
        vec![]
    }
    fn run(&mut self, req: &ExecRequest) -> Result<ExecResult, ExecError> {
        Ok(ExecResult {
            id: req.id,
            status: ExecStatus::Ok,
            error_message: None,
            outputs: None,
            covered_branches: None,
            wall_time_us: 0,
        })
    }
}

#[test]
fn robust_api_gives_empty_entry() {
    let t = target("narrow").unwrap();
    let cfg = CollectConfig { max_random: Some(50), ..Default::default() };
    let entry = collect_errors(&t.sig, &seeds(t, 5, 1), &Mutator::ALL, &mut AlwaysOk, &cfg).unwrap();
    assert!(entry.messages.is_empty() && entry.crashes.is_empty());
    assert!(entry.executed > 50);
}

#[test]
fn crashes_are_kept_apart_from_messages() {
    let t = target("channel_shuffle").unwrap();
    let cfg = CollectConfig { max_random: Some(3000), backend: "gpu".into(), ..Default::default() };
    let entry = collect_errors(&t.sig, &seeds(t, 10, 1), &Mutator::ALL, &mut RefExecutor::new(), &cfg).unwrap();
    assert!(!entry.crashes.is_empty());
    assert!(entry.messages.iter().all(|m| !m.contains("SIGFPE")));
}

fn mutants(input: &ApiInput) -> Vec<ApiInput> {
    let t = apicon_core::exec::target(&input.api).unwrap();
    Mutator::ALL
        .iter()
        .flat_map(|m| t.sig.params.iter().filter_map(move |p| m.apply(input, &t.sig, &p.name)))
        .collect()
}

proptest! {
    #[test]
    fn mutants_stay_well_formed(seed in any::<u64>(), which in 0usize..6) {
        let t = &catalog()[which];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = t.seed_inputs(2, &mut rng);
        inputs.push(random_input(&mut rng, &t.sig, &DtypeTable::default()));
        for x in inputs {
            for m in mutants(&x) {
                for (_, v) in &m.args {
                    if let ConcreteValue::Tensor(t) = v {
                        prop_assert!(t.check().is_ok(), "{:?}", t.check());
                    }
                }
                prop_assert_eq!(decode_input(&encode_input(&m)).unwrap(), m);
            }
        }
    }
}
