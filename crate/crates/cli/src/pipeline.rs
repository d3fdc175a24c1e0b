//! Per-API stages and their artifacts.
//!
//! Offline stages (errors, rules, learn, genabs) write a `.key` file next to
//! each artifact holding a digest of everything the artifact depends on; a
//! rerun with the same digest is skipped.

use std::path::{Path, PathBuf};
use std::time::Duration;

use apicon_core::dsl::ruleset::render_ruleset;
use apicon_core::dsl::{Rule, TypedRule};
use apicon_core::exec::{load_seeds, save_seeds, seeds_path, target, Executor, RefExecutor, SubprocessExecutor};
use apicon_core::fuzz::{fuzz_api, write_findings, FuzzConfig};
use apicon_core::gen::{corpus_load, corpus_path, corpus_save, generate_abstract_inputs, BucketTable, GenConfig};
use apicon_core::learn::{learn, lower_invariants, refine, Invariant, LearnConfig};
use apicon_core::solver::{build_layout, Bounds, Layout};
use apicon_core::sources::llm::{HttpChatModel, StopReason, WallClock};
use apicon_core::sources::{
    collect_errors, enumerate_rules, generate_rules_llm, load_ruleset, shipped_rules, CollectConfig, LlmLimits,
    Mutator, PromptContext,
};
use apicon_core::value::{ApiSignature, DtypeTable};
use rand::SeedableRng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Errors,
    Rules,
    Learn,
    Genabs,
    Fuzz,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Errors, Stage::Rules, Stage::Learn, Stage::Genabs, Stage::Fuzz];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Errors => "errors",
            Stage::Rules => "rules",
            Stage::Learn => "learn",
            Stage::Genabs => "genabs",
            Stage::Fuzz => "fuzz",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

/// Artifact locations for one API.
pub struct Paths {
    pub seeds: PathBuf,
    pub errors: PathBuf,
    pub rules: PathBuf,
    pub learn: PathBuf,
    pub corpus: PathBuf,
    pub fuzz: PathBuf,
}

pub fn short_name<'a>(lib: &str, api: &'a str) -> &'a str {
    api.strip_prefix(&format!("{lib}.")).unwrap_or(api)
}

pub fn paths(cfg: &RunConfig, api: &str) -> Paths {
    let root = &cfg.out_dir;
    let lib = &cfg.library;
    let short = short_name(lib, api);
    Paths {
        seeds: seeds_path(root, lib, api),
        errors: root.join("errors").join(lib).join(format!("{short}.json")),
        rules: root.join("rules").join(lib).join(format!("{short}.rules")),
        learn: root.join("learn").join(lib).join(format!("{short}.json")),
        corpus: corpus_path(root, lib, api),
        fuzz: root.join("reports").join(lib).join(format!("{short}.fuzz.json")),
    }
}

fn stage_err(msg: String) -> Failure {
    Failure::Stage(msg)
}

fn read(path: &Path, what: &str) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| stage_err(format!("missing {what} file {}: {e}", path.display())))
}

fn read_json(path: &Path, what: &str) -> Result<Value, Failure> {
    serde_json::from_slice(&read(path, what)?).map_err(|e| stage_err(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| stage_err(format!("{}: {e}", d.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| stage_err(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    write(path, (serde_json::to_string_pretty(v).expect("json") + "\n").as_bytes())
}

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn key_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".key");
    PathBuf::from(s)
}

fn fresh(artifact: &Path, key: &str) -> bool {
    artifact.exists() && std::fs::read_to_string(key_path(artifact)).is_ok_and(|k| k.trim() == key)
}

fn stamp(artifact: &Path, key: &str) -> Result<(), Failure> {
    write(&key_path(artifact), format!("{key}\n").as_bytes())
}

fn cached(stage: Stage, api: &str, artifact: &Path) -> Value {
    json!({"stage": stage.as_str(), "api": api, "status": "cached", "artifact": artifact})
}

pub fn executor(cfg: &RunConfig) -> Result<Box<dyn Executor>, Failure> {
    match &cfg.executor_cmd {
        None => Ok(Box::new(RefExecutor::new())),
        Some(cmd) => SubprocessExecutor::new(cmd.clone(), Duration::from_secs_f64(cfg.executor_timeout_s))
            .map(|e| Box::new(e) as Box<dyn Executor>)
            .map_err(|e| stage_err(format!("executor '{}': {e}", cmd.join(" ")))),
    }
}

fn signature(cfg: &RunConfig, api: &str) -> Result<ApiSignature, Failure> {
    cfg.api(api)
        .map(|a| a.signature())
        .ok_or_else(|| stage_err(format!("api '{api}' is not configured")))
}

fn layout(cfg: &RunConfig, sig: &ApiSignature) -> Result<Layout, Failure> {
    build_layout(sig, &Bounds::default(), &DtypeTable::default(), &Default::default())
        .map_err(|e| stage_err(format!("{}: {e}", sig.api)))
        .inspect(|_| log::debug!("layout for {} in {}", sig.api, cfg.library))
}

fn cfg_bytes(v: Value) -> Vec<u8> {
    v.to_string().into_bytes()
}

/// Seeds are generated for reference targets and must be supplied otherwise.
fn ensure_seeds(cfg: &RunConfig, api: &str, p: &Paths) -> Result<(), Failure> {
    if p.seeds.exists() {
        return Ok(());
    }
    let Some(t) = target(api).filter(|_| cfg.library == "ref") else {
        return Err(stage_err(format!("missing seed file {}", p.seeds.display())));
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    save_seeds(&t.seed_inputs(cfg.seeds, &mut rng), &p.seeds).map_err(|e| stage_err(format!("{}: {e}", p.seeds.display())))
}

pub fn errors(cfg: &RunConfig, api: &str, ex: &mut dyn Executor) -> Result<Value, Failure> {
    let p = paths(cfg, api);
    ensure_seeds(cfg, api, &p)?;
    let seed_bytes = read(&p.seeds, "seed")?;
    let params = cfg_bytes(json!([cfg.seed, cfg.errors_max_random, cfg.errors_budget_s, cfg.backends[0]]));
    let key = digest(&[b"errors", api.as_bytes(), &seed_bytes, &params]);
    if fresh(&p.errors, &key) {
        return Ok(cached(Stage::Errors, api, &p.errors));
    }
    let sig = signature(cfg, api)?;
    let seeds = load_seeds(&p.seeds).map_err(|e| stage_err(e.to_string()))?;
    let cc = CollectConfig {
        random_budget: Duration::from_secs_f64(cfg.errors_budget_s),
        max_random: Some(cfg.errors_max_random),
        seed: cfg.seed,
        backend: cfg.backends[0].clone(),
    };
    let entry = collect_errors(&sig, &seeds, &Mutator::ALL, ex, &cc).map_err(|e| stage_err(format!("{api}: {e}")))?;
    write_json(
        &p.errors,
        &json!({
            "api": api,
            "seed": cfg.seed,
            "executed": entry.executed,
            "messages": entry.messages,
            "crashes": entry.crashes.iter().map(|(m, _)| m).collect::<Vec<_>>(),
        }),
    )?;
    stamp(&p.errors, &key)?;
    Ok(json!({"stage": "errors", "api": api, "status": "ok", "messages": entry.messages.len(), "executed": entry.executed}))
}

/// Merge per-API error files into `errors/<library>.json`.
pub fn merge_errors(cfg: &RunConfig) -> Result<(), Failure> {
    let mut db = apicon_core::sources::ErrorDb::new(&cfg.library);
    for a in &cfg.apis {
        let Ok(v) = read_json(&paths(cfg, &a.name).errors, "errors") else { continue };
        for m in v["messages"].as_array().into_iter().flatten().filter_map(Value::as_str) {
            db.insert(&a.name, m);
        }
    }
    let path = apicon_core::sources::mutate::errors_path(&cfg.out_dir, &cfg.library);
    db.save(&path).map_err(|e| stage_err(format!("{}: {e}", path.display())))
}

fn candidate_sources(cfg: &RunConfig) -> Result<(Vec<TypedRule>, Vec<u8>), Failure> {
    let mut rules = Vec::new();
    let mut bytes = Vec::new();
    if cfg.shipped_rules {
        rules.extend(shipped_rules());
        bytes.extend(b"shipped");
    }
    for path in &cfg.rulesets {
        let rs = load_ruleset(path).map_err(|e| stage_err(format!("ruleset {}: {e}", path.display())))?;
        for e in &rs.errors {
            log::warn!("skipping rule: {e}");
        }
        bytes.extend(read(path, "ruleset")?);
        rules.extend(rs.typed());
    }
    Ok((rules, bytes))
}

pub fn rules(cfg: &RunConfig, api: &str) -> Result<Value, Failure> {
    let p = paths(cfg, api);
    let sig = signature(cfg, api)?;
    let (mut rules, file_bytes) = candidate_sources(cfg)?;
    let errors_bytes = if cfg.llm.is_some() { read(&p.errors, "errors")? } else { Vec::new() };
    let params = cfg_bytes(json!([cfg.seed, cfg.enumerate, cfg.max_depth, cfg.llm]));
    let key = digest(&[b"rules", api.as_bytes(), &file_bytes, &errors_bytes, &params]);
    if fresh(&p.rules, &key) {
        return Ok(cached(Stage::Rules, api, &p.rules));
    }
    let from_files = rules.len();
    rules.extend(enumerate_rules(&sig, cfg.max_depth, cfg.enumerate, cfg.seed));
    let mut llm_summary = Value::Null;
    if let Some(l) = &cfg.llm {
        let v: Value = serde_json::from_slice(&errors_bytes).map_err(|e| stage_err(format!("{}: {e}", p.errors.display())))?;
        let msgs: Vec<String> = v["messages"].as_array().into_iter().flatten().filter_map(|m| m.as_str().map(String::from)).collect();
        let doc = cfg.api(api).map(|a| a.doc.as_str()).unwrap_or("");
        let ctx = PromptContext::new(&sig, doc, &msgs);
        let mut model = HttpChatModel::new(&l.endpoint, &l.model, &l.key_env, Duration::from_secs_f64(l.timeout_s));
        let limits = LlmLimits { failures: l.failures, timeout: Duration::from_secs_f64(l.timeout_s) };
        let out = generate_rules_llm(&mut model, &ctx, limits, &WallClock::start());
        if let StopReason::Endpoint(e) = &out.stop {
            log::warn!("{api}: chat endpoint stopped the rule loop: {e}");
        }
        llm_summary = json!({"accepted": out.rules.len(), "turns": out.turns.len(), "failures": out.failures, "stop": format!("{:?}", out.stop)});
        rules.extend(out.rules);
    }
    let mut seen: Vec<&Rule> = Vec::new();
    let mut unique: Vec<&TypedRule> = Vec::new();
    for r in &rules {
        if !seen.iter().any(|s| s.bindings == r.rule.bindings && s.body == r.rule.body) {
            seen.push(&r.rule);
            unique.push(r);
        }
    }
    write(&p.rules, render_ruleset(unique.iter().copied()).as_bytes())?;
    stamp(&p.rules, &key)?;
    Ok(json!({"stage": "rules", "api": api, "status": "ok", "rules": unique.len(), "from_files": from_files, "llm": llm_summary}))
}

pub fn load_kept(learn_doc: &Value, path: &Path) -> Result<Vec<Invariant>, Failure> {
    learn_doc["report"]["kept"]
        .as_array()
        .ok_or_else(|| stage_err(format!("{}: no report.kept", path.display())))?
        .iter()
        .map(|v| Invariant::from_json(v).map_err(|e| stage_err(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn learn_stage(cfg: &RunConfig, api: &str, ex: &mut dyn Executor) -> Result<Value, Failure> {
    let p = paths(cfg, api);
    let seed_bytes = read(&p.seeds, "seed")?;
    let rule_bytes = read(&p.rules, "rules")?;
    let params = cfg_bytes(json!([cfg.seed, cfg.trials, cfg.learn_p, cfg.backends[0]]));
    let key = digest(&[b"learn", api.as_bytes(), &seed_bytes, &rule_bytes, &params]);
    if fresh(&p.learn, &key) {
        return Ok(cached(Stage::Learn, api, &p.learn));
    }
    let sig = signature(cfg, api)?;
    let seeds = load_seeds(&p.seeds).map_err(|e| stage_err(e.to_string()))?;
    let rs = load_ruleset(&p.rules).map_err(|e| stage_err(format!("{}: {e}", p.rules.display())))?;
    let candidates = rs.typed();
    let layout = layout(cfg, &sig)?;
    let learned = learn(&candidates, &seeds, &sig).map_err(|e| stage_err(format!("{api}: {e}")))?;
    let lc = LearnConfig {
        trials: cfg.trials,
        seed: cfg.seed,
        backend: cfg.backends[0].clone(),
        p: cfg.learn_p,
        ..Default::default()
    };
    let report = refine(learned, &layout, ex, &lc).map_err(|e| stage_err(format!("{api}: {e}")))?;
    let doc = json!({
        "api": api,
        "seed": cfg.seed,
        "candidates": candidates.len(),
        "seeds": seeds.len(),
        "report": report.to_json(),
    });
    write_json(&p.learn, &doc)?;
    stamp(&p.learn, &key)?;
    Ok(json!({"stage": "learn", "api": api, "status": "ok", "candidates": candidates.len(), "kept": report.kept.len(), "v_final": report.v_final}))
}

pub fn genabs(cfg: &RunConfig, api: &str, ex: &mut dyn Executor) -> Result<Value, Failure> {
    let p = paths(cfg, api);
    let learn_bytes = read(&p.learn, "learn report")?;
    let params = cfg_bytes(json!([cfg.seed, cfg.gen_n, cfg.gen_p, cfg.gen_budget_s, cfg.backends[0]]));
    let key = digest(&[b"genabs", api.as_bytes(), &learn_bytes, &params]);
    if fresh(&p.corpus, &key) {
        return Ok(cached(Stage::Genabs, api, &p.corpus));
    }
    let sig = signature(cfg, api)?;
    let layout = layout(cfg, &sig)?;
    let doc: Value = serde_json::from_slice(&learn_bytes).map_err(|e| stage_err(format!("{}: {e}", p.learn.display())))?;
    let kept = load_kept(&doc, &p.learn)?;
    let lowered = lower_invariants(&kept, &layout);
    let gc = GenConfig {
        n: cfg.gen_n,
        p: cfg.gen_p,
        seed: cfg.seed,
        timeout: Duration::from_secs_f64(cfg.gen_budget_s),
        backend: cfg.backends[0].clone(),
        ..Default::default()
    };
    let (corpus, stats) = generate_abstract_inputs(&lowered, &layout, &BucketTable::default(), ex, &gc)
        .map_err(|e| stage_err(format!("{api}: {e}")))?;
    if corpus.is_empty() {
        return Err(stage_err(format!("{api}: no valid abstract input within budget")));
    }
    corpus_save(&corpus, &p.corpus).map_err(|e| stage_err(e.to_string()))?;
    stamp(&p.corpus, &key)?;
    Ok(json!({"stage": "genabs", "api": api, "status": "ok", "corpus": corpus.len(), "iterations": stats.iterations}))
}

pub fn fuzz(cfg: &RunConfig, api: &str, ex: &mut dyn Executor) -> Result<Value, Failure> {
    let p = paths(cfg, api);
    let sig = signature(cfg, api)?;
    let layout = layout(cfg, &sig)?;
    let corpus = corpus_load(&p.corpus).map_err(|e| stage_err(format!("missing corpus file {}: {e}", p.corpus.display())))?;
    let doc = read_json(&p.learn, "learn report")?;
    let kept = load_kept(&doc, &p.learn)?;
    let lowered = lower_invariants(&kept, &layout);
    let fc = FuzzConfig {
        budget: Duration::from_secs_f64(cfg.fuzz_budget_s),
        max_inputs: cfg.fuzz_max_inputs,
        seed: cfg.seed,
        tolerance: cfg.tolerance,
        backends: cfg.backends.clone(),
    };
    let report = fuzz_api(&layout, &lowered.rechecks(), &corpus, ex, &fc).map_err(|e| stage_err(format!("{api}: {e}")))?;
    write_findings(&cfg.out_dir, &cfg.library, &report.findings).map_err(|e| stage_err(e.to_string()))?;
    write_json(&p.fuzz, &report.to_json())?;
    let kinds: Vec<&str> = report.findings.iter().map(|f| f.kind().as_str()).collect();
    Ok(json!({
        "stage": "fuzz", "api": api, "status": "ok",
        "generated": report.generated,
        "validity_ratio": report.validity_ratio(),
        "findings": kinds,
    }))
}

pub fn run_stage(cfg: &RunConfig, stage: Stage, api: &str, ex: &mut dyn Executor) -> Result<Value, Failure> {
    match stage {
        Stage::Errors => errors(cfg, api, ex),
        Stage::Rules => rules(cfg, api),
        Stage::Learn => learn_stage(cfg, api, ex),
        Stage::Genabs => genabs(cfg, api, ex),
        Stage::Fuzz => fuzz(cfg, api, ex),
    }
}
