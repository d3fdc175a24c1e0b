//! The online phase: concretize corpus entries, run them on every backend and
//! apply the crash and differential oracles.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::concretize::{concretize, ConcretizeError, Recheck};
use crate::exec::{ExecError, ExecRequest, ExecResult, ExecStatus, Executor};
use crate::gen::Corpus;
use crate::learn::mix;
use crate::solver::Layout;
use crate::value::{encode_input, encode_value, ApiInput, ConcreteValue, Tensor};

/// Example inputs retained per deduplicated finding.
pub const MAX_EXAMPLES: usize = 16;

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub budget: Duration,
    /// Stop after this many generated inputs, if set.
    pub max_inputs: Option<u64>,
    pub seed: u64,
    pub tolerance: f64,
    /// The first backend decides validity.
    pub backends: Vec<String>,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            budget: Duration::from_secs(180),
            max_inputs: None,
            seed: 0,
            tolerance: 0.01,
            backends: vec!["cpu".into(), "gpu".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FindingKind {
    Crash,
    NaN,
    Overflow,
    Inconsistent,
}

impl FindingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FindingKind::Crash => "crash",
            FindingKind::NaN => "nan",
            FindingKind::Overflow => "overflow",
            FindingKind::Inconsistent => "inconsistent",
        }
    }

    pub fn parse(s: &str) -> Option<FindingKind> {
        [
            FindingKind::Crash,
            FindingKind::NaN,
            FindingKind::Overflow,
            FindingKind::Inconsistent,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

/// What the oracles concluded for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub kind: FindingKind,
    pub backends: Vec<String>,
    /// Human-readable detail.
    pub evidence: String,
    /// Number-free text used for deduplication.
    pub signature: String,
    pub max_abs_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Agree,
    Found(Discrepancy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub api: String,
    pub discrepancy: Discrepancy,
    pub input: ApiInput,
    /// Reproduction seed of the first occurrence.
    pub seed: u64,
    pub corpus_index: usize,
    pub occurrences: u64,
    /// (seed, corpus index) of further occurrences.
    pub examples: Vec<(u64, usize)>,
}

impl Finding {
    pub fn kind(&self) -> FindingKind {
        self.discrepancy.kind
    }

    pub fn hash(&self) -> String {
        finding_hash(self.kind(), &self.api, &self.discrepancy.signature)
    }

    pub fn to_json(&self) -> Value {
        let d = &self.discrepancy;
        json!({
            "kind": d.kind.as_str(),
            "api": self.api,
            "backends": d.backends,
            "evidence": d.evidence,
            "signature": d.signature,
            "max_abs_diff": d.max_abs_diff,
            "seed": self.seed,
            "corpus_index": self.corpus_index,
            "occurrences": self.occurrences,
            "examples": self.examples.iter().map(|(s, i)| json!({"seed": s, "corpus_index": i})).collect::<Vec<_>>(),
            "input": encode_input(&self.input),
        })
    }
}

/// Lowercase, collapse whitespace and replace digit runs with `N`.
pub fn normalize_message(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_num = false;
    let mut space = false;
    for c in s.trim().chars() {
        if c.is_ascii_digit() {
            if !in_num {
                out.push('N');
            }
            in_num = true;
            space = false;
            continue;
        }
        in_num = false;
        if c.is_whitespace() {
            if !space {
                out.push(' ');
            }
            space = true;
            continue;
        }
        space = false;
        out.extend(c.to_lowercase());
    }
    out
}

pub fn finding_hash(kind: FindingKind, api: &str, signature: &str) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_str());
    h.update([0]);
    h.update(api);
    h.update([0]);
    h.update(normalize_message(signature));
    hex::encode(&h.finalize()[..6])
}

fn has_nan(v: &ConcreteValue) -> bool {
    match v {
        ConcreteValue::Float(x) => x.is_nan(),
        ConcreteValue::Tensor(t) => t.lo.is_nan() || t.hi.is_nan() || t.elements.as_ref().is_some_and(|e| e.iter().any(|x| x.is_nan())),
        ConcreteValue::List(xs) | ConcreteValue::Tuple(xs) => xs.iter().any(has_nan),
        _ => false,
    }
}

fn has_inf(v: &ConcreteValue) -> bool {
    match v {
        ConcreteValue::Float(x) => x.is_infinite(),
        ConcreteValue::Tensor(t) => t.elements.as_ref().is_some_and(|e| e.iter().any(|x| x.is_infinite())),
        ConcreteValue::List(xs) | ConcreteValue::Tuple(xs) => xs.iter().any(has_inf),
        _ => false,
    }
}

enum Cmp {
    Equal,
    Within,
    Shape(String),
    Differ(f64),
    Mismatch(String),
}

fn tensor_diff(a: &Tensor, b: &Tensor) -> Cmp {
    if a.shape != b.shape {
        return Cmp::Shape(format!("output shapes differ: {:?} vs {:?}", a.shape, b.shape));
    }
    if a.dtype != b.dtype {
        return Cmp::Mismatch(format!("output dtypes differ: {} vs {}", a.dtype, b.dtype));
    }
    let pairs: Vec<(f64, f64)> = match (&a.elements, &b.elements) {
        (Some(x), Some(y)) => x.iter().copied().zip(y.iter().copied()).collect(),
        _ => vec![(a.lo, b.lo), (a.hi, b.hi)],
    };
    let mut max = 0.0f64;
    for (x, y) in pairs {
        if x.is_nan() && y.is_nan() || x == y {
            continue;
        }
        let d = (x - y).abs();
        max = if d.is_nan() { f64::INFINITY } else { max.max(d) };
    }
    if max == 0.0 {
        Cmp::Equal
    } else {
        Cmp::Differ(max)
    }
}

fn value_diff(a: &ConcreteValue, b: &ConcreteValue) -> Cmp {
    match (a, b) {
        (ConcreteValue::Tensor(x), ConcreteValue::Tensor(y)) => tensor_diff(x, y),
        (ConcreteValue::Float(x), ConcreteValue::Float(y)) => {
            if x == y || x.is_nan() && y.is_nan() {
                Cmp::Equal
            } else {
                Cmp::Differ((x - y).abs())
            }
        }
        _ if a == b => Cmp::Equal,
        _ => Cmp::Mismatch(format!("outputs differ: {} vs {}", encode_value(a), encode_value(b))),
    }
}

fn outputs_diff(a: &[ConcreteValue], b: &[ConcreteValue], tol: f64) -> Cmp {
    if a.len() != b.len() {
        return Cmp::Shape(format!("output counts differ: {} vs {}", a.len(), b.len()));
    }
    let mut max = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        match value_diff(x, y) {
            Cmp::Equal | Cmp::Within => {}
            Cmp::Differ(d) => max = max.max(d),
            other => return other,
        }
    }
    if max == 0.0 {
        Cmp::Equal
    } else if max > tol {
        Cmp::Differ(max)
    } else {
        Cmp::Within
    }
}

/// Apply the crash oracle, then the differential oracle, to per-backend
/// results for one input.
pub fn classify(results: &[(String, ExecResult)], tolerance: f64) -> Verdict {
    if let Some((b, r)) = results.iter().find(|(_, r)| r.status == ExecStatus::Crash) {
        let detail = r.error_message.clone().unwrap_or_else(|| "crash".into());
        return Verdict::Found(Discrepancy {
            kind: FindingKind::Crash,
            backends: vec![b.clone()],
            evidence: format!("{b}: {detail}"),
            signature: detail,
            max_abs_diff: None,
        });
    }
    if results.len() < 2 {
        return Verdict::Agree;
    }
    let (b0, r0) = &results[0];
    for (b1, r1) in &results[1..] {
        let pair = vec![b0.clone(), b1.clone()];
        let found = |kind, evidence: String, signature: String, diff| {
            Verdict::Found(Discrepancy {
                kind,
                backends: pair.clone(),
                evidence,
                signature,
                max_abs_diff: diff,
            })
        };
        match (r0.status, r1.status) {
            (ExecStatus::Ok, ExecStatus::Ok) => {}
            (ExecStatus::Ok, ExecStatus::Error) | (ExecStatus::Error, ExecStatus::Ok) => {
                let (eb, er) = if r0.status == ExecStatus::Error { (b0, r0) } else { (b1, r1) };
                let msg = er.error_message.clone().unwrap_or_default();
                let kind = if msg.to_lowercase().contains("overflow") {
                    FindingKind::Overflow
                } else {
                    FindingKind::Inconsistent
                };
                return found(kind, format!("only {eb} raised: {msg}"), format!("{eb} raised {msg}"), None);
            }
            _ => continue,
        }
        let (Some(o0), Some(o1)) = (&r0.outputs, &r1.outputs) else {
            continue;
        };
        let nan0 = o0.iter().any(has_nan);
        let nan1 = o1.iter().any(has_nan);
        if nan0 != nan1 {
            let who = if nan0 { b0 } else { b1 };
            return found(FindingKind::NaN, format!("NaN only on {who}"), format!("nan on {who}"), None);
        }
        let inf0 = o0.iter().any(has_inf);
        let inf1 = o1.iter().any(has_inf);
        if inf0 != inf1 {
            let who = if inf0 { b0 } else { b1 };
            return found(FindingKind::Overflow, format!("infinity only on {who}"), format!("inf on {who}"), None);
        }
        match outputs_diff(o0, o1, tolerance) {
            Cmp::Equal | Cmp::Within => {}
            Cmp::Differ(d) => {
                return found(
                    FindingKind::Inconsistent,
                    format!("max abs diff {d} exceeds tolerance {tolerance}"),
                    "max abs diff exceeds tolerance".into(),
                    Some(d),
                )
            }
            Cmp::Shape(m) => return found(FindingKind::Inconsistent, m, "output shapes differ".into(), None),
            Cmp::Mismatch(m) => return found(FindingKind::Inconsistent, m.clone(), m, None),
        }
    }
    Verdict::Agree
}

#[derive(Debug, thiserror::Error)]
pub enum FuzzError {
    #[error("the corpus is empty")]
    EmptyCorpus,
    #[error("at least two backends are needed, got {0}")]
    TooFewBackends(usize),
    #[error("the corpus was generated for a different layout")]
    LayoutMismatch,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(#[from] ExecError),
}

fn run_all(
    ex: &mut dyn Executor,
    api: &str,
    input: &ApiInput,
    backends: &[String],
    id: u64,
) -> Result<Vec<(String, ExecResult)>, ExecError> {
    let mut out = Vec::with_capacity(backends.len());
    for b in backends {
        let req = ExecRequest {
            id,
            api: api.to_string(),
            backend: b.clone(),
            input: input.clone(),
            want_outputs: true,
        };
        out.push((b.clone(), ex.run(&req)?));
    }
    Ok(out)
}

/// Run `input` on every backend and classify the results.
pub fn run_differential(
    ex: &mut dyn Executor,
    api: &str,
    input: &ApiInput,
    backends: &[String],
    tolerance: f64,
) -> Result<Verdict, FuzzError> {
    if backends.len() < 2 {
        return Err(FuzzError::TooFewBackends(backends.len()));
    }
    let results = run_all(ex, api, input, backends, 0)?;
    Ok(classify(&results, tolerance))
}

#[derive(Debug, Clone, Default)]
pub struct FuzzReport {
    pub api: String,
    pub seed: u64,
    pub generated: u64,
    pub valid: u64,
    pub invalid: u64,
    pub crashed: u64,
    pub concretize_failed: u64,
    pub findings: Vec<Finding>,
    pub branches: BTreeSet<String>,
    pub elapsed: Duration,
    pub concretize_time: Duration,
}

impl FuzzReport {
    pub fn validity_ratio(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.valid as f64 / self.generated as f64
        }
    }

    pub fn throughput(&self) -> f64 {
        let s = self.elapsed.as_secs_f64();
        if s == 0.0 {
            0.0
        } else {
            self.generated as f64 / s
        }
    }

    pub fn concretize_mean_ms(&self) -> f64 {
        let n = self.generated + self.concretize_failed;
        if n == 0 {
            0.0
        } else {
            self.concretize_time.as_secs_f64() * 1e3 / n as f64
        }
    }

    pub fn findings_by_kind(&self) -> BTreeMap<FindingKind, usize> {
        let mut m = BTreeMap::new();
        for f in &self.findings {
            *m.entry(f.kind()).or_insert(0) += 1;
        }
        m
    }

    pub fn to_json(&self) -> Value {
        json!({
            "api": self.api,
            "seed": self.seed,
            "generated": self.generated,
            "valid": self.valid,
            "invalid": self.invalid,
            "crashed": self.crashed,
            "concretize_failed": self.concretize_failed,
            "validity_ratio": self.validity_ratio(),
            "throughput": self.throughput(),
            "elapsed_s": self.elapsed.as_secs_f64(),
            "concretize_mean_ms": self.concretize_mean_ms(),
            "findings": self.findings.iter().map(|f| json!({
                "kind": f.kind().as_str(),
                "hash": f.hash(),
                "seed": f.seed,
                "occurrences": f.occurrences,
                "evidence": f.discrepancy.evidence,
            })).collect::<Vec<_>>(),
            "branches": self.branches,
        })
    }
}

/// Seed of iteration `i` of a run started with `seed`.
pub fn iteration_seed(seed: u64, i: u64) -> u64 {
    mix(seed, i)
}

/// Regenerate the concrete input of a reproduction seed.
pub fn replay_input(
    corpus: &Corpus,
    layout: &Layout,
    rechecks: &[Recheck],
    repro_seed: u64,
) -> Result<(usize, ApiInput), ConcretizeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(repro_seed);
    let idx = rng.gen_range(0..corpus.len());
    let input = concretize(&corpus.entries[idx].model, layout, rechecks, &mut rng)?;
    Ok((idx, input))
}

/// Replay a finding and return the fresh verdict alongside the input.
pub fn replay(
    finding: &Finding,
    corpus: &Corpus,
    layout: &Layout,
    rechecks: &[Recheck],
    ex: &mut dyn Executor,
    backends: &[String],
    tolerance: f64,
) -> Result<(ApiInput, Verdict), FuzzError> {
    let (_, input) = replay_input(corpus, layout, rechecks, finding.seed)
        .map_err(|e| FuzzError::BackendUnavailable(ExecError::Protocol(e.to_string())))?;
    let results = run_all(ex, &layout.api, &input, backends, 0)?;
    Ok((input, classify(&results, tolerance)))
}

/// Fuzz one API from its corpus until the budget or input cap is reached.
pub fn fuzz_api(
    layout: &Layout,
    rechecks: &[Recheck],
    corpus: &Corpus,
    ex: &mut dyn Executor,
    cfg: &FuzzConfig,
) -> Result<FuzzReport, FuzzError> {
    if corpus.is_empty() {
        return Err(FuzzError::EmptyCorpus);
    }
    if !corpus.matches(layout) {
        return Err(FuzzError::LayoutMismatch);
    }
    if cfg.backends.is_empty() {
        return Err(FuzzError::TooFewBackends(0));
    }
    let start = Instant::now();
    let mut report = FuzzReport {
        api: layout.api.clone(),
        seed: cfg.seed,
        ..Default::default()
    };
    let mut index: BTreeMap<(FindingKind, String), usize> = BTreeMap::new();
    let mut i: u64 = 0;
    while start.elapsed() < cfg.budget && cfg.max_inputs.is_none_or(|m| report.generated < m) {
        let repro = iteration_seed(cfg.seed, i);
        i += 1;
        let t0 = Instant::now();
        let replayed = replay_input(corpus, layout, rechecks, repro);
        report.concretize_time += t0.elapsed();
        let Ok((idx, input)) = replayed else {
            report.concretize_failed += 1;
            continue;
        };
        report.generated += 1;
        let results = run_all(ex, &layout.api, &input, &cfg.backends, i)?;
        for (_, r) in &results {
            if let Some(bs) = &r.covered_branches {
                report.branches.extend(bs.iter().cloned());
            }
        }
        match results[0].1.status {
            ExecStatus::Ok => report.valid += 1,
            ExecStatus::Crash => report.crashed += 1,
            ExecStatus::Error | ExecStatus::Timeout => report.invalid += 1,
        }
        let Verdict::Found(d) = classify(&results, cfg.tolerance) else {
            continue;
        };
        let key = (d.kind, normalize_message(&d.signature));
        match index.get(&key) {
            Some(&at) => {
                let f = &mut report.findings[at];
                f.occurrences += 1;
                if f.examples.len() < MAX_EXAMPLES {
                    f.examples.push((repro, idx));
                }
            }
            None => {
                index.insert(key, report.findings.len());
                report.findings.push(Finding {
                    api: layout.api.clone(),
                    discrepancy: d,
                    input,
                    seed: repro,
                    corpus_index: idx,
                    occurrences: 1,
                    examples: Vec::new(),
                });
            }
        }
    }
    report.elapsed = start.elapsed();
    Ok(report)
}

/// `findings/<library>/<api>/<kind>-<hash>.json` under `root`.
pub fn finding_path(root: &Path, library: &str, f: &Finding) -> PathBuf {
    let api = f.api.strip_prefix(&format!("{library}.")).unwrap_or(&f.api);
    root.join("findings")
        .join(library)
        .join(api)
        .join(format!("{}-{}.json", f.kind().as_str(), f.hash()))
}

pub fn write_findings(root: &Path, library: &str, findings: &[Finding]) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for f in findings {
        let p = finding_path(root, library, f);
        if let Some(d) = p.parent() {
            std::fs::create_dir_all(d)?;
        }
        std::fs::write(&p, serde_json::to_string_pretty(&f.to_json())? + "\n")?;
        out.push(p);
    }
    Ok(out)
}
