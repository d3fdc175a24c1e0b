use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::Duration;

use apicon_core::exec::{ExecRequest, ExecStatus, Executor, SubprocessExecutor};
use apicon_core::value::{ApiInput, ConcreteValue, Tensor};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_apicon");

const SMALL: &str = "
seed = 0
jobs = 2
[errors]
max_random = 300
[rules]
enumerate = 40
[genabs]
n = 50
[fuzz]
budget_s = 2
";

fn apicon(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn lines(o: &Output) -> Vec<Value> {
    stdout(o).lines().filter_map(|l| serde_json::from_str(l).ok()).collect()
}

fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One full run over the whole catalog, shared by the report tests.
fn full_run() -> &'static (tempfile::TempDir, Output) {
    static RUN: OnceLock<(tempfile::TempDir, Output)> = OnceLock::new();
    RUN.get_or_init(|| {
        let (dir, cfg) = workspace();
        let out = dir.path().join("out");
        let o = apicon(&["all", "--config", s(&cfg), "--out-dir", s(&out)]);
        (dir, o)
    })
}

#[test]
fn all_finds_the_seeded_crash() {
    let (dir, o) = full_run();
    assert!(o.status.success(), "{}", stderr(o));
    let fuzz: Vec<Value> = lines(o).into_iter().filter(|v| v["stage"] == "fuzz").collect();
    assert_eq!(fuzz.len(), 6);
    let cs = fuzz.iter().find(|v| v["api"] == "ref.channel_shuffle").unwrap();
    assert!(cs["findings"].as_array().unwrap().iter().any(|k| k == "crash"), "{cs}");
    let findings = dir.path().join("out/findings/ref/channel_shuffle");
    assert!(std::fs::read_dir(findings).unwrap().any(|e| e.unwrap().file_name().to_string_lossy().starts_with("crash-")));
    assert!(dir.path().join("out/errors/ref.json").exists());
}

#[test]
fn report_has_recall_and_precision() {
    let (dir, _) = full_run();
    let out = dir.path().join("out");
    let o = apicon(&["report", "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().next().unwrap().starts_with("api\trules\tkept"));
    let doc: Value = serde_json::from_slice(&std::fs::read(out.join("reports/summary.json")).unwrap()).unwrap();
    let rows = doc["apis"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert!(r["recall"].is_number() && r["precision"].is_number(), "{r}");
        assert!(r["validity_ratio"].as_f64().unwrap() >= 0.95, "{r}");
    }
    assert_eq!(doc["seed_mismatch"], false);
}

#[test]
fn report_flags_mixed_seeds_and_empty_findings() {
    let (dir, cfg) = workspace();
    let out = dir.path().join("out");
    let o = apicon(&["all", "--api", "argmax", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = apicon(&["report", "--api", "argmax", "--config", s(&cfg), "--out-dir", s(&out)]);
    let doc: Value = serde_json::from_slice(&std::fs::read(out.join("reports/summary.json")).unwrap()).unwrap();
    assert_eq!(doc["apis"][0]["findings"], serde_json::json!({}));
    assert!(!stdout(&o).contains("warning"));
    let o = apicon(&["fuzz", "--api", "argmax", "--seed", "7", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = apicon(&["report", "--api", "argmax", "--config", s(&cfg), "--out-dir", s(&out)]);
    assert!(stdout(&o).contains("different seeds"), "{}", stdout(&o));
}

#[test]
fn report_without_artifacts_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = apicon(&["report", "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn learn_without_seeds_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = apicon(&["learn", "--api", "lcm", "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("seeds/ref/lcm.jsonl"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    let (dir, _) = workspace();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[genabs]\np = 3.0\n").unwrap();
    let o = apicon(&["genabs", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("genabs.p"), "{}", stderr(&o));
    let o = apicon(&["fuzz", "--api", "no_such_api"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_api"));
    let o = apicon(&["fuzz", "--budget-s", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--budget-s"));
}

#[test]
fn offline_stages_are_cached_and_deterministic() {
    let (dir, cfg) = workspace();
    let run = |out: &Path| {
        for stage in ["errors", "rules", "learn", "genabs"] {
            let o = apicon(&[stage, "--api", "narrow", "--config", s(&cfg), "--out-dir", s(out)]);
            assert!(o.status.success(), "{stage}: {}", stderr(&o));
        }
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a);
    run(&b);
    for f in ["errors/ref/narrow.json", "rules/ref/narrow.rules", "learn/ref/narrow.json", "corpus/ref/narrow.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let o = apicon(&["genabs", "--api", "narrow", "--config", s(&cfg), "--out-dir", s(&a)]);
    assert_eq!(lines(&o)[0]["status"], "cached");
    let o = apicon(&["genabs", "--api", "narrow", "--seed", "3", "--config", s(&cfg), "--out-dir", s(&a)]);
    assert_eq!(lines(&o)[0]["status"], "ok");
}

#[test]
fn eval_checks_a_rule() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.json");
    std::fs::write(
        &input,
        r#"{"api": "ref.argmax", "args": {"input": {"kind": "tensor", "shape": [2, 3], "dtype": "float32", "lo": 0, "hi": 1}, "dim": {"kind": "int", "value": 2}}}"#,
    )
    .unwrap();
    let rule = "{v_1: tensor, v_2: int} |= -1 * ndim(v_1) <= v_2 and v_2 <= ndim(v_1) - 1";
    let o = apicon(&["eval", "--rule", rule, "--input", s(&input), "--params", "input,dim"]);
    assert_eq!(lines(&o)[0]["verdict"], "fails", "{}", stderr(&o));
    let o = apicon(&["eval", "--rule", "{input: tensor} |= ndim(input) = 2", "--input", s(&input)]);
    assert_eq!(lines(&o)[0]["verdict"], "holds", "{}", stderr(&o));
    let o = apicon(&["eval", "--rule", "{input: tensor} |= shape(input, 5) = 2", "--input", s(&input)]);
    assert_eq!(lines(&o)[0]["verdict"], "error");
    let o = apicon(&["eval", "--rule", "{v_1: tensor} |= ndim(v_1) >", "--input", s(&input)]);
    assert_eq!(o.status.code(), Some(2));
}

fn shuffle(groups: i64) -> ExecRequest {
    let input = ApiInput::new("ref.channel_shuffle")
        .with("input", ConcreteValue::Tensor(Tensor::summary(vec![1, 3, 4], 0, 0.0, 1.0)))
        .with("groups", ConcreteValue::Int(groups));
    ExecRequest { id: groups as u64, api: "ref.channel_shuffle".into(), backend: "gpu".into(), input, want_outputs: true }
}

#[test]
fn subprocess_crash_is_contained() {
    let mut ex = SubprocessExecutor::new(vec![BIN.into(), "serve-ref".into()], Duration::from_secs(5)).unwrap();
    assert!(ex.apis().contains(&"ref.channel_shuffle".to_string()));
    let r = ex.run(&shuffle(7)).unwrap();
    assert_eq!((r.status, r.id), (ExecStatus::Crash, 7));
    assert!(r.error_message.unwrap().contains("signal"));
    let r = ex.run(&shuffle(3)).unwrap();
    assert_eq!(r.status, ExecStatus::Ok);
    assert_eq!(ex.spawns, 2);
}
