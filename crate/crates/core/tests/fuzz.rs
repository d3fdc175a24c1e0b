mod common;

use std::time::Duration;

use apicon_core::exec::{catalog, target, ExecResult, ExecStatus, RefExecutor};
use apicon_core::fuzz::{classify, fuzz_api, replay, replay_input, FindingKind, FuzzConfig, Verdict};
use apicon_core::value::{encode_input, ConcreteValue, Tensor};
use common::{gt_rules, prepare};

fn ok(xs: &[f64]) -> ExecResult {
    ExecResult {
        id: 0,
        status: ExecStatus::Ok,
        error_message: None,
        outputs: Some(vec![ConcreteValue::Tensor(Tensor::from_elements(vec![xs.len() as u64], 0, xs.to_vec()))]),
        covered_branches: None,
        wall_time_us: 0,
    }
}

fn pair(a: ExecResult, b: ExecResult) -> Vec<(String, ExecResult)> {
    vec![("cpu".into(), a), ("gpu".into(), b)]
}

fn kind(v: Verdict) -> Option<FindingKind> {
    match v {
        Verdict::Agree => None,
        Verdict::Found(d) => Some(d.kind),
    }
}

#[test]
fn tolerance_and_kinds() {
    assert_eq!(kind(classify(&pair(ok(&[1.0, 2.0]), ok(&[1.0, 2.5])), 0.01)), Some(FindingKind::Inconsistent));
    assert_eq!(kind(classify(&pair(ok(&[1.0, 2.0]), ok(&[1.0, 2.000001])), 0.01)), None);
    assert_eq!(kind(classify(&pair(ok(&[1.0]), ok(&[f64::NAN])), 0.01)), Some(FindingKind::NaN));
    assert_eq!(kind(classify(&pair(ok(&[1.0]), ok(&[f64::INFINITY])), 0.01)), Some(FindingKind::Overflow));
    assert_eq!(kind(classify(&pair(ok(&[1.0]), ok(&[1.0, 1.0])), 0.01)), Some(FindingKind::Inconsistent));
    let crash = ExecResult::synthesized(0, ExecStatus::Crash, "SIGSEGV");
    assert_eq!(kind(classify(&pair(ok(&[f64::NAN]), crash.clone()), 0.01)), Some(FindingKind::Crash));
    let e1 = ExecResult::synthesized(0, ExecStatus::Error, "bad");
    let e2 = ExecResult::synthesized(0, ExecStatus::Error, "also bad");
    assert_eq!(kind(classify(&pair(e1, e2), 0.01)), None);
}

#[test]
fn seeded_defects_are_found_and_replay() {
    let expect = [
        ("channel_shuffle", FindingKind::Crash),
        ("add_broadcast", FindingKind::NaN),
        ("matmul2d", FindingKind::Inconsistent),
        ("lcm", FindingKind::Overflow),
    ];
    for (name, k) in expect {
        let t = target(name).unwrap();
        let p = prepare(t, &gt_rules(t), 100, 0);
        let rechecks = p.lowered.rechecks();
        let mut ex = RefExecutor::new();
        let cfg = FuzzConfig { budget: Duration::from_secs(10), max_inputs: Some(3000), seed: 1, ..Default::default() };
        let r = fuzz_api(&p.layout, &rechecks, &p.corpus, &mut ex, &cfg).unwrap();
        assert_eq!(r.valid + r.invalid + r.crashed, r.generated);
        let f = r.findings.iter().find(|f| f.kind() == k).unwrap_or_else(|| panic!("{name}: no {k:?}"));
        let (_, again) = replay_input(&p.corpus, &p.layout, &rechecks, f.seed).unwrap();
        assert_eq!(encode_input(&again).to_string(), encode_input(&f.input).to_string());
        let (_, v) = replay(f, &p.corpus, &p.layout, &rechecks, &mut ex, &cfg.backends, cfg.tolerance).unwrap();
        assert_eq!(kind(v), Some(k), "{name}");
    }
}

#[test]
fn throughput_floor() {
    let mut generated = 0;
    let mut secs = 0.0;
    for t in catalog() {
        let p = prepare(t, &gt_rules(t), 50, 0);
        let cfg = FuzzConfig { budget: Duration::from_millis(500), ..Default::default() };
        let r = fuzz_api(&p.layout, &p.lowered.rechecks(), &p.corpus, &mut RefExecutor::new(), &cfg).unwrap();
        assert!(r.validity_ratio() >= 0.95, "{}: {}", t.name, r.validity_ratio());
        generated += r.generated;
        secs += r.elapsed.as_secs_f64();
    }
    assert!(generated as f64 / secs >= 1000.0, "{generated} in {secs}s");
}
