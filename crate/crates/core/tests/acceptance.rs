//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use apicon_core::concretize::{concretize, Recheck};
use apicon_core::dsl::{compile_rule, parse_rule, render_rule, type_check};
use apicon_core::eval::{check_on_input, Verdict};
use apicon_core::exec::targets::{BROADCAST, DIM_VALID};
use apicon_core::exec::{catalog, target, ExecResult, ExecStatus, RefExecutor, RefTarget};
use apicon_core::fuzz::{classify, fuzz_api, replay, replay_input, FindingKind, FuzzConfig};
use apicon_core::gen::{generate_abstract_inputs, BucketTable, GenConfig};
use apicon_core::learn::{enumerate_candidates, learn, lower_invariants, refine, LearnConfig, LearnReport};
use apicon_core::score::{evaluation_set, score};
use apicon_core::solver::{lower_rule, solve_layout, Bounds, Formula, Slot, SolveResult, SolverConfig};
use apicon_core::sources::llm::{ManualClock, ScriptedModel, StopReason, WallClock};
use apicon_core::sources::{enumerate_rules, generate_rules_llm, shipped_ruleset, shipped_rules, FeedbackKind, LlmLimits, PromptContext};
use apicon_core::value::{encode_input, ApiInput, ConcreteValue, Tensor};
use common::{gt_rules, negative_typing_cases, prepare, seeds};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grammar() -> Outcome {
    let mut texts: Vec<String> = Vec::new();
    for file in ["broadcast.rules", "ref.rules"] {
        let rs = shipped_ruleset(file).ok_or(format!("{file} missing"))?;
        ensure(rs.errors.is_empty(), || format!("{file}: {:?}", rs.errors))?;
        texts.extend(rs.rules.iter().map(|r| render_rule(&r.rule.rule)));
    }
    for t in catalog() {
        texts.extend(gt_rules(t).iter().map(|r| render_rule(&r.rule)));
    }
    texts.push(DIM_VALID.to_string());
    for text in &texts {
        let r = parse_rule(text).map_err(|e| format!("{text}: {e}"))?;
        ensure(parse_rule(&render_rule(&r)).as_ref() == Ok(&r), || format!("round trip: {text}"))?;
        type_check(&r).map_err(|e| format!("{text}: {e:?}"))?;
    }
    let names: Vec<String> = shipped_ruleset("broadcast.rules").unwrap().rules.iter().map(|r| r.rule.rule.name.clone()).collect();
    ensure(names.iter().any(|n| n == "broadcastable") && names.iter().any(|n| n == "compatible_sizes"), || format!("{names:?}"))?;
    let cases = negative_typing_cases();
    let mut kinds = BTreeSet::new();
    for (text, kind) in &cases {
        let r = parse_rule(text).map_err(|e| format!("{text}: {e}"))?;
        let report = type_check(&r).err().ok_or(format!("accepted: {text}"))?;
        ensure(report.kinds().contains(kind), || format!("{text}: {:?}", report.kinds()))?;
        kinds.insert(format!("{kind:?}"));
    }
    Ok(format!("{} rules round-trip, {} negative cases over {} error kinds", texts.len(), cases.len(), kinds.len()))
}

fn shape_tensor(s: &[u64]) -> ConcreteValue {
    ConcreteValue::Tensor(Tensor::summary(s.to_vec(), 0, 0.0, 1.0))
}

fn brute_broadcast(x: &[u64], y: &[u64]) -> bool {
    (0..x.len().max(y.len())).all(|k| {
        let a = x.len().checked_sub(k + 1).map_or(1, |i| x[i]);
        let b = y.len().checked_sub(k + 1).map_or(1, |i| y[i]);
        a == b || a == 1 || b == 1
    })
}

fn broadcast() -> Outcome {
    let start = Instant::now();
    let rule = compile_rule(BROADCAST).map_err(|e| e.to_string())?;
    let params = vec!["x".to_string(), "y".to_string()];
    let holds = |a: &[u64], b: &[u64]| {
        let input = ApiInput::new("t").with("x", shape_tensor(a)).with("y", shape_tensor(b));
        check_on_input(&rule.rule, &params, &input)
    };
    let mut shapes = vec![vec![]];
    let mut layer: Vec<Vec<u64>> = vec![vec![]];
    for _ in 0..3 {
        layer = layer.iter().flat_map(|s| (1..=3).map(move |d| [s.clone(), vec![d]].concat())).collect();
        shapes.extend(layer.clone());
    }
    let mut pairs = 0;
    for a in &shapes {
        for b in &shapes {
            let want = if brute_broadcast(a, b) { Verdict::Holds } else { Verdict::Fails };
            ensure(holds(a, b) == want, || format!("{a:?} {b:?}"))?;
            pairs += 1;
        }
    }
    ensure(holds(&[5, 3, 4, 1], &[3, 1, 1]) == Verdict::Holds, || "[5,3,4,1] vs [3,1,1]".into())?;
    ensure(holds(&[3, 4], &[2, 4]) == Verdict::Fails, || "[3,4] vs [2,4]".into())?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{pairs} pairs agree in {elapsed:.2?}"))
}

fn learn_target(t: &RefTarget) -> Result<LearnReport, String> {
    let mut rules = enumerate_rules(&t.sig, 3, 100, 7);
    rules.extend(shipped_rules());
    let learned = learn(&rules, &seeds(t, 117, 1), &t.sig).map_err(|e| e.to_string())?;
    let layout = t.layout(&Bounds::default());
    refine(learned, &layout, &mut RefExecutor::new(), &LearnConfig::default()).map_err(|e| e.to_string())
}

fn recall_precision(reports: &[(&'static RefTarget, LearnReport)], learn_time: Duration) -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut bad = Vec::new();
    for (t, r) in reports {
        let mut all = r.kept.clone();
        all.extend(r.excluded_unlowerable.iter().map(|(i, _)| i.clone()));
        let s = score(&all, &t.ground_truth(), &evaluation_set(t, 500, 3), |x| t.is_valid(x));
        lines.push(format!("{} {:.2}/{:.2}", t.name, s.recall, s.precision));
        if s.recall < 1.0 || s.precision < 0.9 {
            bad.push(t.name);
        }
    }
    let elapsed = learn_time + start.elapsed();
    let summary = format!("recall/precision {} in {elapsed:.1?}", lines.join(", "));
    ensure(bad.is_empty() && elapsed < Duration::from_secs(120), || summary.clone())?;
    Ok(summary)
}

fn redundancy() -> Outcome {
    let t = target("add_broadcast").unwrap();
    let rules = shipped_ruleset("broadcast.rules").unwrap().typed();
    let layout = t.layout(&Bounds::default());
    let learned = learn(&rules, &seeds(t, 117, 1), &t.sig).map_err(|e| e.to_string())?;
    let cfg = LearnConfig::default();
    let r = refine(learned, &layout, &mut RefExecutor::new(), &cfg).map_err(|e| e.to_string())?;
    let survivors: Vec<&str> = r
        .kept
        .iter()
        .map(|i| i.rule.rule.name.as_str())
        .filter(|n| matches!(*n, "broadcastable" | "compatible_sizes"))
        .collect();
    let slack = 1.0 / cfg.trials as f64;
    let msg = format!("survivors {survivors:?}, v_orig {:.3}, v_final {:.3}", r.v_orig, r.v_final);
    ensure(survivors.len() == 1 && (r.v_final - r.v_orig).abs() <= slack, || msg.clone())?;
    Ok(msg)
}

fn validity(reports: &[(&'static RefTarget, LearnReport)]) -> Outcome {
    let mut lines = Vec::new();
    let mut bad = false;
    for (t, r) in reports {
        let layout = t.layout(&Bounds::default());
        let lowered = lower_invariants(&r.kept, &layout);
        let mut ex = RefExecutor::new();
        let gcfg = GenConfig { n: 200, ..Default::default() };
        let (corpus, _) = generate_abstract_inputs(&lowered, &layout, &BucketTable::default(), &mut ex, &gcfg)
            .map_err(|e| format!("{}: {e}", t.name))?;
        let cfg = FuzzConfig { budget: Duration::from_secs(30), ..Default::default() };
        let f = fuzz_api(&layout, &lowered.rechecks(), &corpus, &mut ex, &cfg).map_err(|e| format!("{}: {e}", t.name))?;
        let (v, n, ms) = (f.validity_ratio(), f.generated, f.concretize_mean_ms());
        bad |= v < 0.95 || n < 10_000 || ms > 50.0;
        lines.push(format!("{} {:.1}% {n} {ms:.3}ms", t.name, v * 100.0));
    }
    let summary = format!("validity/inputs/concretize: {}", lines.join(", "));
    ensure(!bad, || summary.clone())?;
    Ok(summary)
}

fn diversity() -> Outcome {
    let table = BucketTable::default();
    let mut spread = 0;
    for t in catalog() {
        let p = prepare(t, &gt_rules(t), 50, 0);
        ensure(p.corpus.len() == 50, || format!("{}: {} entries", t.name, p.corpus.len()))?;
        let distinct: BTreeSet<&Vec<i64>> = p.corpus.entries.iter().map(|e| &e.model).collect();
        ensure(distinct.len() == 50, || format!("{}: {} distinct", t.name, distinct.len()))?;
        for w in p.corpus.entries.windows(2) {
            for (name, x) in &w[1].provenance.blocked {
                let v = p.layout.var_by_name(name).unwrap();
                ensure(w[0].model[v] == *x && w[1].model[v] != *x, || format!("{}: {name} repeated", t.name))?;
            }
        }
        if t.name == "argmax" {
            let Some(Slot::Tensor { dims, .. }) = p.layout.slot("input") else {
                return Err("argmax has no input tensor".into());
            };
            for &d in dims {
                let hit: BTreeSet<usize> = p.corpus.entries.iter().filter_map(|e| table.dim_bucket(e.model[d])).collect();
                ensure(hit.len() >= 3, || format!("{} hits {hit:?}", p.layout.vars[d].name))?;
                spread += 1;
            }
        }
    }
    Ok(format!("50 distinct models on 6 targets, {spread} free dims over >= 3 buckets"))
}

fn ok_result(xs: &[f64]) -> ExecResult {
    ExecResult {
        id: 0,
        status: ExecStatus::Ok,
        error_message: None,
        outputs: Some(vec![ConcreteValue::Tensor(Tensor::from_elements(vec![xs.len() as u64], 0, xs.to_vec()))]),
        covered_branches: None,
        wall_time_us: 0,
    }
}

fn oracles() -> Outcome {
    let pair = |a: &[f64], b: &[f64]| vec![("cpu".to_string(), ok_result(a)), ("gpu".to_string(), ok_result(b))];
    let kind_of = |v| match v {
        apicon_core::fuzz::Verdict::Agree => None,
        apicon_core::fuzz::Verdict::Found(d) => Some(d.kind),
    };
    ensure(kind_of(classify(&pair(&[1.0], &[1.5]), 0.01)) == Some(FindingKind::Inconsistent), || "0.5 skew".into())?;
    ensure(kind_of(classify(&pair(&[1.0], &[1.000001]), 0.01)).is_none(), || "1e-6 skew".into())?;
    ensure(kind_of(classify(&pair(&[1.0], &[f64::NAN]), 0.01)) == Some(FindingKind::NaN), || "nan".into())?;
    let mut found = Vec::new();
    for (name, kind, cap) in [
        ("channel_shuffle", FindingKind::Crash, None),
        ("add_broadcast", FindingKind::NaN, Some(3000)),
        ("matmul2d", FindingKind::Inconsistent, Some(3000)),
    ] {
        let t = target(name).unwrap();
        let p = prepare(t, &gt_rules(t), 100, 0);
        let rechecks = p.lowered.rechecks();
        let mut ex = RefExecutor::new();
        let cfg = FuzzConfig { budget: Duration::from_secs(10), max_inputs: cap, seed: 1, ..Default::default() };
        let r = fuzz_api(&p.layout, &rechecks, &p.corpus, &mut ex, &cfg).map_err(|e| e.to_string())?;
        let f = r.findings.iter().find(|f| f.kind() == kind).ok_or(format!("{name}: no {}", kind.as_str()))?;
        let (_, again) = replay_input(&p.corpus, &p.layout, &rechecks, f.seed).map_err(|e| e.to_string())?;
        ensure(encode_input(&again).to_string() == encode_input(&f.input).to_string(), || format!("{name}: replay differs"))?;
        let (_, v) = replay(f, &p.corpus, &p.layout, &rechecks, &mut ex, &cfg.backends, cfg.tolerance).map_err(|e| e.to_string())?;
        ensure(kind_of(v) == Some(kind), || format!("{name}: replay verdict changed"))?;
        found.push(format!("{name} {}", kind.as_str()));
    }
    Ok(format!("found and replayed {}", found.join(", ")))
}

fn soundness() -> Outcome {
    let mut lowerable = 0;
    let mut models = 0;
    'outer: for round in 0..20u64 {
        for t in catalog() {
            let layout = t.layout(&Bounds::default());
            for rule in enumerate_rules(&t.sig, 3, 20, round) {
                let Some(params) = enumerate_candidates(&rule, &t.sig).into_iter().next() else { continue };
                let Ok(low) = lower_rule(&rule, &params, &layout) else { continue };
                lowerable += 1;
                let rechecks = [Recheck { rule: &rule.rule, params: &params }];
                let rc: &[Recheck] = if low.approximate { &rechecks } else { &[] };
                for seed in 0..3 {
                    let cfg = SolverConfig { node_limit: 20_000, seed };
                    let SolveResult::Sat(m) = solve_layout(&layout, &[&low.formula], &cfg) else { continue };
                    let Ok(input) = concretize(&m, &layout, rc, &mut ChaCha8Rng::seed_from_u64(seed)) else { continue };
                    models += 1;
                    let v = check_on_input(&rule.rule, &params, &input);
                    ensure(v == Verdict::Holds, || format!("{} on {input}: {v:?}", render_rule(&rule.rule)))?;
                }
                if lowerable == 200 {
                    break 'outer;
                }
            }
        }
    }
    ensure(lowerable == 200, || format!("only {lowerable} lowerable rules"))?;

    let t = target("add_broadcast").unwrap();
    let layout = t.layout(&Bounds::default());
    let slot = |p| match layout.slot(p) {
        Some(Slot::Tensor { nd, dims, .. }) => (*nd, dims.clone()),
        _ => unreachable!(),
    };
    let ((nd1, d1), (nd2, d2)) = (slot("input"), slot("other"));
    let params = vec!["input".to_string(), "other".to_string()];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for text in [
        BROADCAST,
        "{v_1: tensor, v_2: tensor} |= forall i in [0, ndim(v_1) - 1] : shape(v_1, i) = shape(v_2, i)",
        "{v_1: tensor, v_2: tensor} |= exists i in [0, ndim(v_1) - 1] : shape(v_1, i) > shape(v_2, 0)",
    ] {
        let rule = compile_rule(text).unwrap();
        let low = lower_rule(&rule, &params, &layout).map_err(|e| format!("{text}: {e}"))?;
        for a in 0..=5i64 {
            for b in 0..=5i64 {
                let mut fixes = vec![Formula::var_eq(nd1, a), Formula::var_eq(nd2, b)];
                for &v in d1.iter().take(a as usize).chain(d2.iter().take(b as usize)) {
                    fixes.push(Formula::var_eq(v, rng.gen_range(1..=3)));
                }
                let fs: Vec<&Formula> = fixes.iter().collect();
                let cfg = SolverConfig { node_limit: 20_000, seed: 0 };
                let m = solve_layout(&layout, &fs, &cfg).model().ok_or(format!("nd=({a},{b}) unsolved"))?;
                let input = concretize(&m, &layout, &[], &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| e.to_string())?;
                let evaluated = check_on_input(&rule.rule, &params, &input) == Verdict::Holds;
                ensure(low.formula.holds(&m) == evaluated, || format!("{text} nd=({a},{b})"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("{models} models of 200 rules hold; {checked} quantifier expansions match"))
}

fn llm_loop() -> Outcome {
    let t = target("argmax").unwrap();
    let ctx = PromptContext::new(&t.sig, t.doc, &[]);
    let turns = [
        "The dim argument must be valid.",
        "{v_1: tensor, v_2: int} |= ndim(v_1) >= 1",
        DIM_VALID,
        DIM_VALID,
        "{v_1: tensor |= ndim(v_1) = 1",
    ];
    let mut m = ScriptedModel::new(turns.iter().map(|s| s.to_string()).collect());
    let out = generate_rules_llm(&mut m, &ctx, LlmLimits::default(), &WallClock::start());
    use FeedbackKind::*;
    let want = vec![FormatError, RedundantBindings, Success, DuplicateRule, ParsingError];
    ensure(out.feedback_kinds() == want, || format!("{:?}", out.feedback_kinds()))?;

    let mut m = ScriptedModel::from_fn(|_, _| Some("{v_1: int} |= v_1 >".into()));
    let out = generate_rules_llm(&mut m, &ctx, LlmLimits::default(), &WallClock::start());
    ensure(out.stop == StopReason::FailureBound && out.failures == 100, || format!("{:?} after {}", out.stop, out.failures))?;

    let n = target("narrow").unwrap();
    let pool: Vec<String> = enumerate_rules(&n.sig, 3, 2000, 0).iter().map(|r| render_rule(&r.rule)).collect();
    let clock = ManualClock::default();
    let mut m = ScriptedModel::from_fn(move |i, _| Some(pool[i * 5..i * 5 + 5].join("\n")))
        .with_clock(clock.clone(), Duration::from_millis(1500));
    let out = generate_rules_llm(&mut m, &PromptContext::new(&n.sig, n.doc, &[]), LlmLimits::default(), &clock);
    ensure(out.stop == StopReason::Timeout && out.rules.len() >= 20, || format!("{:?} with {} rules", out.stop, out.rules.len()))?;
    let multi = out.turns.iter().filter(|t| t.feedback.iter().filter(|f| f.kind == Success).count() > 1).count();
    ensure(multi > 0, || "no multi-rule turn accepted".into())?;
    Ok(format!("five kinds in order, failure bound at 100, timeout after {} turns with {} rules", out.turns.len(), out.rules.len()))
}

fn run(n: usize, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let (tag, detail) = match &r {
        Ok(s) => ("PASS", s),
        Err(s) => ("FAIL", s),
    };
    println!("criterion {n}: {tag} ({:.1?}) {detail}", start.elapsed());
    r.is_ok()
}

fn main() {
    let start = Instant::now();
    let mut ok = true;
    ok &= run(1, grammar);
    ok &= run(2, broadcast);
    let t0 = Instant::now();
    let reports: Vec<_> = catalog().iter().filter_map(|t| learn_target(t).ok().map(|r| (t, r))).collect();
    let learn_time = t0.elapsed();
    ok &= run(3, || {
        ensure(reports.len() == catalog().len(), || "refinement failed".into())?;
        recall_precision(&reports, learn_time)
    });
    ok &= run(4, redundancy);
    ok &= run(5, || validity(&reports));
    ok &= run(6, diversity);
    ok &= run(7, oracles);
    ok &= run(8, soundness);
    ok &= run(9, llm_loop);
    println!("acceptance: {} in {:.1?}", if ok { "PASS" } else { "FAIL" }, start.elapsed());
    if !ok {
        std::process::exit(1);
    }
}
