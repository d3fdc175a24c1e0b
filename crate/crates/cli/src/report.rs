//! Consolidated per-API report over stage artifacts.

use std::collections::{BTreeMap, BTreeSet};

use apicon_core::exec::target;
use apicon_core::learn::Invariant;
use apicon_core::score::{evaluation_set, score};
use apicon_core::sources::load_ruleset;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::pipeline::{paths, short_name};
use crate::Failure;

fn read_json(path: &std::path::Path) -> Option<Value> {
    serde_json::from_slice(&std::fs::read(path).ok()?).ok()
}

fn invariants(list: &Value, nested: bool) -> Vec<Invariant> {
    list.as_array()
        .into_iter()
        .flatten()
        .filter_map(|v| Invariant::from_json(if nested { &v["invariant"] } else { v }).ok())
        .collect()
}

fn row(cfg: &RunConfig, api: &str) -> Option<Value> {
    let p = paths(cfg, api);
    let rules = load_ruleset(&p.rules).ok().map(|rs| rs.rules.len());
    let learn = read_json(&p.learn);
    let corpus = std::fs::read_to_string(&p.corpus).ok().map(|t| t.lines().filter(|l| !l.trim().is_empty()).count());
    let fuzz = read_json(&p.fuzz);
    if rules.is_none() && learn.is_none() && corpus.is_none() && fuzz.is_none() {
        return None;
    }
    let mut seeds = BTreeSet::new();
    for doc in [&learn, &fuzz].into_iter().flatten() {
        if let Some(s) = doc["seed"].as_u64() {
            seeds.insert(s);
        }
    }
    if let Some(s) = read_json(&p.errors).and_then(|d| d["seed"].as_u64()) {
        seeds.insert(s);
    }
    let mut findings: BTreeMap<String, u64> = BTreeMap::new();
    let dir = cfg.out_dir.join("findings").join(&cfg.library).join(short_name(&cfg.library, api));
    for entry in std::fs::read_dir(&dir).into_iter().flatten().flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some((kind, _)) = name.split_once('-') {
            *findings.entry(kind.to_string()).or_default() += 1;
        }
    }
    let kept = learn.as_ref().map(|d| invariants(&d["report"]["kept"], false));
    let (mut recall, mut precision) = (Value::Null, Value::Null);
    if let (Some(t), Some(learn)) = (target(api).filter(|_| cfg.library == "ref"), &learn) {
        let mut all = kept.clone().unwrap_or_default();
        all.extend(invariants(&learn["report"]["excluded_unlowerable"], true));
        let s = score(&all, &t.ground_truth(), &evaluation_set(t, 500, 3), |x| t.is_valid(x));
        recall = json!(s.recall);
        precision = json!(s.precision);
    }
    Some(json!({
        "api": api,
        "rules": rules,
        "kept": kept.map(|k| k.len()),
        "corpus": corpus,
        "generated": fuzz.as_ref().map(|f| f["generated"].clone()),
        "validity_ratio": fuzz.as_ref().map(|f| f["validity_ratio"].clone()),
        "throughput": fuzz.as_ref().map(|f| f["throughput"].clone()),
        "findings": findings,
        "recall": recall,
        "precision": precision,
        "seeds": seeds,
        "seed_mismatch": seeds.len() > 1,
    }))
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::Number(n) if n.is_f64() => format!("{:.3}", n.as_f64().unwrap_or(0.0)),
        Value::Object(m) if m.is_empty() => "0".into(),
        Value::Object(m) => m.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

pub fn render_table(rows: &[Value]) -> String {
    let cols = ["api", "rules", "kept", "corpus", "validity_ratio", "throughput", "findings", "recall", "precision", "seed_mismatch"];
    let mut out = cols.join("\t");
    out.push('\n');
    for r in rows {
        let line: Vec<String> = cols
            .iter()
            .map(|c| match &r[*c] {
                Value::String(s) => s.clone(),
                v => cell(v),
            })
            .collect();
        out.push_str(&line.join("\t"));
        out.push('\n');
    }
    out
}

pub fn report(cfg: &RunConfig) -> Result<Value, Failure> {
    let rows: Vec<Value> = cfg.apis.iter().filter_map(|a| row(cfg, &a.name)).collect();
    if rows.is_empty() {
        return Err(Failure::Stage(format!("no stage artifacts under {}", cfg.out_dir.display())));
    }
    let all_seeds: BTreeSet<u64> = rows
        .iter()
        .flat_map(|r| r["seeds"].as_array().cloned().unwrap_or_default())
        .filter_map(|s| s.as_u64())
        .collect();
    let doc = json!({
        "library": cfg.library,
        "apis": rows,
        "seed_mismatch": all_seeds.len() > 1,
    });
    let path = cfg.out_dir.join("reports").join("summary.json");
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(|e| Failure::Stage(format!("{}: {e}", d.display())))?;
    }
    std::fs::write(&path, serde_json::to_string_pretty(&doc).expect("json") + "\n")
        .map_err(|e| Failure::Stage(format!("{}: {e}", path.display())))?;
    Ok(doc)
}
