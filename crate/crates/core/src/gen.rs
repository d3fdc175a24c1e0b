//! Abstract input generation: solver models under the learned invariants,
//! spread out by blocking and bucketing, kept only when the target accepts
//! their concretization.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::concretize::concretize;
use crate::exec::{ExecError, ExecRequest, Executor};
use crate::learn::{mix, LoweredSet};
use crate::solver::search::propagate;
use crate::solver::{solve_layout, Formula, Layout, SolveResult, SolverConfig, VarId, VarKind, SCALE};

pub type Range = (i64, i64);

/// Per-kind partitions of the descriptor domains.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketTable {
    pub ints: Vec<Range>,
    pub dims: Vec<Range>,
    pub floats: Vec<Range>,
    pub bools: Vec<Range>,
}

fn float_buckets() -> Vec<Range> {
    // magnitude decades in scaled units: 0, (0,1), [1,10), ..., [1e5, 1e6]
    let mut pos = vec![(1, SCALE - 1)];
    let mut lo = SCALE;
    for _ in 0..5 {
        pos.push((lo, lo * 10 - 1));
        lo *= 10;
    }
    pos.push((lo, 1_000_000 * SCALE));
    let mut out: Vec<Range> = pos.iter().rev().map(|&(a, b)| (-b, -a)).collect();
    out.push((0, 0));
    out.extend(pos);
    out
}

impl Default for BucketTable {
    fn default() -> Self {
        BucketTable {
            ints: vec![
                (-(1 << 31), -65),
                (-64, -2),
                (-1, -1),
                (0, 0),
                (1, 1),
                (2, 8),
                (9, 64),
                (65, (1 << 31) - 1),
            ],
            dims: vec![(0, 0), (1, 1), (2, 4), (5, 16), (17, 64)],
            floats: float_buckets(),
            bools: vec![(0, 0), (1, 1)],
        }
    }
}

fn clip(ranges: &[Range], lo: i64, hi: i64) -> Vec<Range> {
    let mut out: Vec<Range> = ranges
        .iter()
        .map(|&(a, b)| (a.max(lo), b.min(hi)))
        .filter(|(a, b)| a <= b)
        .collect();
    // widen the ends so the clipped partition still covers the domain
    if let Some(first) = out.first_mut() {
        first.0 = lo;
    }
    if let Some(last) = out.last_mut() {
        last.1 = hi;
    }
    out
}

impl BucketTable {
    /// Buckets for a variable, clipped to its domain. Enumerated kinds
    /// (dtype, string, length, union tag) get one bucket per value.
    pub fn for_var(&self, kind: VarKind, lo: i64, hi: i64) -> Vec<Range> {
        if lo > hi {
            return Vec::new();
        }
        match kind {
            VarKind::Int => clip(&self.ints, lo, hi),
            VarKind::Dim | VarKind::Ndim => clip(&self.dims, lo, hi),
            VarKind::Float | VarKind::RangeLo | VarKind::RangeHi => clip(&self.floats, lo, hi),
            VarKind::Bool => clip(&self.bools, lo, hi),
            VarKind::Dtype | VarKind::Enum | VarKind::Len | VarKind::Tag => {
                if hi - lo > 4096 {
                    vec![(lo, hi)]
                } else {
                    (lo..=hi).map(|v| (v, v)).collect()
                }
            }
        }
    }

    /// Index of the dim bucket containing `v`.
    pub fn dim_bucket(&self, v: i64) -> Option<usize> {
        self.dims.iter().position(|&(a, b)| a <= v && v <= b)
    }
}

/// Values previously recorded per variable.
#[derive(Debug, Clone, Default)]
pub struct BlockingStore {
    seen: BTreeMap<VarId, Vec<i64>>,
    last: BTreeMap<VarId, i64>,
}

impl BlockingStore {
    pub fn record(&mut self, model: &[i64]) {
        for (v, &x) in model.iter().enumerate() {
            let s = self.seen.entry(v).or_default();
            if !s.contains(&x) {
                s.push(x);
            }
            self.last.insert(v, x);
        }
    }

    pub fn values(&self, v: VarId) -> &[i64] {
        self.seen.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The value taken by `v` in the most recently recorded model.
    pub fn last(&self, v: VarId) -> Option<i64> {
        self.last.get(&v).copied()
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub p: f64,
    pub n: usize,
    pub timeout: Duration,
    pub seed: u64,
    /// Upper bound on loop iterations, so a deterministic run cannot spin.
    pub max_iters: usize,
    pub solver_nodes: usize,
    pub backend: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            p: 0.3,
            n: 200,
            timeout: Duration::from_secs(60),
            seed: 0,
            max_iters: 20_000,
            solver_nodes: SolverConfig::default().node_limit,
            backend: "cpu".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub iteration: usize,
    pub seed: u64,
    pub buckets: Vec<(String, i64, i64)>,
    pub blocked: Vec<(String, i64)>,
    /// Bucket atoms were dropped after the first solve failed.
    pub relaxed: bool,
}

impl Provenance {
    fn to_json(&self) -> Value {
        json!({
            "iteration": self.iteration,
            "seed": self.seed,
            "buckets": self.buckets.iter().map(|(v, a, b)| json!({"var": v, "lo": a, "hi": b})).collect::<Vec<_>>(),
            "blocked": self.blocked.iter().map(|(v, x)| json!({"var": v, "value": x})).collect::<Vec<_>>(),
            "relaxed": self.relaxed,
        })
    }

    fn from_json(v: &Value) -> Option<Provenance> {
        let s = |x: &Value, k: &str| x.get(k).and_then(Value::as_str).map(String::from);
        let i = |x: &Value, k: &str| x.get(k).and_then(Value::as_i64);
        Some(Provenance {
            iteration: v.get("iteration")?.as_u64()? as usize,
            seed: v.get("seed")?.as_u64()?,
            buckets: v
                .get("buckets")?
                .as_array()?
                .iter()
                .map(|b| Some((s(b, "var")?, i(b, "lo")?, i(b, "hi")?)))
                .collect::<Option<_>>()?,
            blocked: v
                .get("blocked")?
                .as_array()?
                .iter()
                .map(|b| Some((s(b, "var")?, i(b, "value")?)))
                .collect::<Option<_>>()?,
            relaxed: v.get("relaxed")?.as_bool()?,
        })
    }
}

/// A total assignment to the layout's variables.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractInput {
    pub model: Vec<i64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    /// Variable names, in layout order.
    pub names: Vec<String>,
    pub entries: Vec<AbstractInput>,
}

impl Corpus {
    pub fn new(layout: &Layout) -> Corpus {
        Corpus {
            names: layout.names(),
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn matches(&self, layout: &Layout) -> bool {
        self.names == layout.names()
    }

    /// Index of the first entry violating the base formula or any of `formulas`.
    pub fn first_violation(&self, layout: &Layout, formulas: &[&Formula]) -> Option<usize> {
        self.entries.iter().position(|e| {
            !layout.base.holds(&e.model) || formulas.iter().any(|f| !f.holds(&e.model))
        })
    }

    fn line(&self, e: &AbstractInput) -> String {
        let model: Map<String, Value> = self
            .names
            .iter()
            .zip(&e.model)
            .map(|(n, v)| (n.clone(), Value::from(*v)))
            .collect();
        json!({"model": model, "provenance": e.provenance.to_json()}).to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenStats {
    pub iterations: usize,
    pub unsat: usize,
    pub unknown: usize,
    pub relaxed: usize,
    pub concretize_failed: usize,
    pub invalid: usize,
    pub duplicates: usize,
    pub elapsed: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum GenError {
    #[error("the invariants are unsatisfiable together with the layout bounds")]
    BaseUnsat,
    #[error(transparent)]
    Executor(#[from] ExecError),
}

/// One draw of the diversified solver loop: sampled variables get a blocking
/// disequality against their last recorded value and a bucket range.
pub struct Sampler<'l> {
    layout: &'l Layout,
    buckets: Vec<Vec<Range>>,
    /// Variables not fixed by the formulas; only these are sampled.
    free: Vec<VarId>,
    k: usize,
    pub store: BlockingStore,
    rng: ChaCha8Rng,
    seed: u64,
    nodes: usize,
}

impl<'l> Sampler<'l> {
    pub fn new(layout: &'l Layout, formulas: &[&Formula], table: &BucketTable, p: f64, seed: u64, nodes: usize) -> Self {
        let mut doms = layout.domains();
        let mut goals: Vec<&Formula> = vec![&layout.base];
        goals.extend_from_slice(formulas);
        if !propagate(&mut doms, &mut goals) {
            doms = layout.domains();
        }
        let free: Vec<VarId> = (0..doms.len()).filter(|&v| doms[v].0 != doms[v].1).collect();
        let k = if free.is_empty() {
            0
        } else {
            ((p * free.len() as f64).ceil() as usize).clamp(1, free.len())
        };
        Sampler {
            layout,
            buckets: layout
                .vars
                .iter()
                .zip(&doms)
                .map(|(v, &(lo, hi))| table.for_var(v.kind, lo, hi))
                .collect(),
            free,
            k,
            store: BlockingStore::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            nodes,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Solve once with fresh blocking and bucket atoms, retrying without the
    /// bucket atoms when that fails.
    pub fn draw(&mut self, formulas: &[&Formula], iteration: usize) -> (SolveResult, Provenance) {
        let layout = self.layout;
        let mut picked: Vec<VarId> = sample(&mut self.rng, self.free.len(), self.k)
            .into_iter()
            .map(|i| self.free[i])
            .collect();
        picked.sort_unstable();
        let mut prov = Provenance {
            iteration,
            seed: self.seed,
            ..Default::default()
        };
        let mut blocks = Vec::new();
        let mut bucket_atoms = Vec::new();
        for &v in &picked {
            let name = &layout.vars[v].name;
            if let Some(x) = self.store.last(v) {
                blocks.push(Formula::var_ne(v, x));
                prov.blocked.push((name.clone(), x));
            }
            let bl = &self.buckets[v];
            if !bl.is_empty() {
                let (a, b) = bl[self.rng.gen_range(0..bl.len())];
                bucket_atoms.push(Formula::var_in(v, a, b));
                prov.buckets.push((name.clone(), a, b));
            }
        }
        let cfg = SolverConfig {
            node_limit: self.nodes,
            seed: mix(self.seed, iteration as u64),
        };
        let mut fs: Vec<&Formula> = formulas.to_vec();
        fs.extend(blocks.iter());
        let strict: Vec<&Formula> = fs.iter().copied().chain(bucket_atoms.iter()).collect();
        let res = solve_layout(layout, &strict, &cfg);
        if matches!(res, SolveResult::Sat(_)) {
            return (res, prov);
        }
        prov.relaxed = true;
        prov.buckets.clear();
        (solve_layout(layout, &fs, &cfg), prov)
    }
}

/// Build a corpus of valid abstract inputs. Stops at `cfg.n` entries, at the
/// timeout, or after `cfg.max_iters` iterations.
pub fn generate_abstract_inputs(
    lowered: &LoweredSet,
    layout: &Layout,
    buckets: &BucketTable,
    ex: &mut dyn Executor,
    cfg: &GenConfig,
) -> Result<(Corpus, GenStats), GenError> {
    let start = Instant::now();
    let invs = lowered.formulas();
    let rechecks = lowered.rechecks();
    let probe = SolverConfig {
        node_limit: cfg.solver_nodes,
        seed: cfg.seed,
    };
    if solve_layout(layout, &invs, &probe) == SolveResult::Unsat {
        return Err(GenError::BaseUnsat);
    }
    let mut sampler = Sampler::new(layout, &invs, buckets, cfg.p, cfg.seed, cfg.solver_nodes);
    let mut corpus = Corpus::new(layout);
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    let mut stats = GenStats::default();
    while corpus.len() < cfg.n && stats.iterations < cfg.max_iters && start.elapsed() < cfg.timeout {
        let iteration = stats.iterations;
        stats.iterations += 1;
        let (res, prov) = sampler.draw(&invs, iteration);
        if prov.relaxed {
            stats.relaxed += 1;
        }
        let model = match res {
            SolveResult::Sat(m) => m,
            SolveResult::Unsat => {
                stats.unsat += 1;
                continue;
            }
            SolveResult::Unknown => {
                stats.unknown += 1;
                continue;
            }
        };
        let Ok(input) = concretize(&model, layout, &rechecks, sampler.rng()) else {
            stats.concretize_failed += 1;
            continue;
        };
        let req = ExecRequest {
            id: iteration as u64,
            api: layout.api.clone(),
            backend: cfg.backend.clone(),
            input,
            want_outputs: false,
        };
        if !ex.run(&req)?.is_ok() {
            stats.invalid += 1;
            continue;
        }
        if !seen.insert(model.clone()) {
            stats.duplicates += 1;
            continue;
        }
        sampler.store.record(&model);
        corpus.entries.push(AbstractInput { model, provenance: prov });
    }
    stats.elapsed = start.elapsed();
    Ok((corpus, stats))
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt corpus at line {line}: {detail}")]
    CorruptCorpus {
        line: usize,
        detail: String,
        recovered: Box<Corpus>,
    },
}

/// `corpus/<library>/<api>.jsonl` under `root`.
pub fn corpus_path(root: &Path, library: &str, api: &str) -> PathBuf {
    let api = api.strip_prefix(&format!("{library}.")).unwrap_or(api);
    root.join("corpus").join(library).join(format!("{api}.jsonl"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn corpus_save(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = std::io::BufWriter::new(File::create(path).map_err(io_err(path))?);
    for e in &corpus.entries {
        writeln!(f, "{}", corpus.line(e)).map_err(io_err(path))?;
    }
    f.flush().map_err(io_err(path))
}

/// Append entries; the file's variable names must match the corpus.
pub fn corpus_append(corpus: &Corpus, entries: &[AbstractInput], path: &Path) -> Result<(), CorpusError> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    for e in entries {
        writeln!(f, "{}", corpus.line(e)).map_err(io_err(path))?;
    }
    Ok(())
}

fn parse_line(text: &str, names: &mut Option<Vec<String>>) -> Result<AbstractInput, String> {
    let v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let Some(Value::Object(m)) = v.get("model") else {
        return Err("missing model object".into());
    };
    let keys: Vec<String> = m.keys().cloned().collect();
    match names {
        Some(n) if *n != keys => return Err("model variables differ from earlier lines".into()),
        Some(_) => {}
        None => *names = Some(keys),
    }
    let model = m
        .values()
        .map(|x| x.as_i64().ok_or_else(|| format!("non-integer value {x}")))
        .collect::<Result<Vec<_>, _>>()?;
    let provenance = v
        .get("provenance")
        .and_then(Provenance::from_json)
        .ok_or("missing or malformed provenance")?;
    Ok(AbstractInput { model, provenance })
}

pub fn corpus_load(path: &Path) -> Result<Corpus, CorpusError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut names = None;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line, &mut names) {
            Ok(e) => entries.push(e),
            Err(detail) => {
                return Err(CorpusError::CorruptCorpus {
                    line: i + 1,
                    detail,
                    recovered: Box::new(Corpus {
                        names: names.unwrap_or_default(),
                        entries,
                    }),
                })
            }
        }
    }
    Ok(Corpus {
        names: names.unwrap_or_default(),
        entries,
    })
}
