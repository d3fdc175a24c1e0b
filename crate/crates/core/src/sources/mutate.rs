//! Seed mutation and error-message collection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::dsl::TypeExpr;
use crate::exec::{rand_tensor, ExecError, ExecRequest, ExecStatus, Executor};
use crate::fuzz::normalize_message;
use crate::value::{ApiInput, ApiSignature, ConcreteValue, DtypeKind, DtypeTable, Tensor};

pub const INT_EXTREME: i64 = (1 << 31) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mutator {
    DropOptional,
    EmptyTensor,
    AllZero,
    IntNegate,
    IntExtreme,
    DtypeSwap,
    RankUp,
    RankDown,
    KindConfusion,
}

impl Mutator {
    pub const ALL: [Mutator; 9] = [
        Mutator::DropOptional,
        Mutator::EmptyTensor,
        Mutator::AllZero,
        Mutator::IntNegate,
        Mutator::IntExtreme,
        Mutator::DtypeSwap,
        Mutator::RankUp,
        Mutator::RankDown,
        Mutator::KindConfusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mutator::DropOptional => "drop-optional-param",
            Mutator::EmptyTensor => "empty-tensor",
            Mutator::AllZero => "all-zero",
            Mutator::IntNegate => "int-negate",
            Mutator::IntExtreme => "int-extreme",
            Mutator::DtypeSwap => "dtype-swap",
            Mutator::RankUp => "rank+1",
            Mutator::RankDown => "rank-1",
            Mutator::KindConfusion => "kind-confusion",
        }
    }

    /// Mutate parameter `param` of `input`; `None` when the mutator does not
    /// apply to that parameter.
    pub fn apply(self, input: &ApiInput, sig: &ApiSignature, param: &str) -> Option<ApiInput> {
        let p = sig.param(param)?;
        let v = input.get(param)?;
        let table = DtypeTable::default();
        let new = match (self, v) {
            (_, ConcreteValue::None) => return None,
            (Mutator::DropOptional, _) if !p.required => ConcreteValue::None,
            (Mutator::EmptyTensor, ConcreteValue::Tensor(t)) => {
                let mut shape = t.shape.clone();
                match shape.first_mut() {
                    Some(d) => *d = 0,
                    None => shape.push(0),
                }
                ConcreteValue::Tensor(Tensor {
                    shape,
                    dtype: t.dtype,
                    lo: 0.0,
                    hi: 0.0,
                    elements: t.elements.as_ref().map(|_| Vec::new()),
                })
            }
            (Mutator::AllZero, ConcreteValue::Tensor(t)) => ConcreteValue::Tensor(Tensor {
                shape: t.shape.clone(),
                dtype: t.dtype,
                lo: 0.0,
                hi: 0.0,
                elements: t.elements.as_ref().map(|e| vec![0.0; e.len()]),
            }),
            (Mutator::AllZero, ConcreteValue::Int(_)) => ConcreteValue::Int(0),
            (Mutator::AllZero, ConcreteValue::Float(_)) => ConcreteValue::Float(0.0),
            (Mutator::IntNegate, ConcreteValue::Int(x)) if *x != 0 => ConcreteValue::Int(-x),
            (Mutator::IntNegate, ConcreteValue::Int(_)) => ConcreteValue::Int(-1),
            (Mutator::IntNegate, ConcreteValue::List(xs)) => ConcreteValue::List(map_ints(xs, |x| -x)?),
            (Mutator::IntNegate, ConcreteValue::Tuple(xs)) => ConcreteValue::Tuple(map_ints(xs, |x| -x)?),
            (Mutator::IntExtreme, ConcreteValue::Int(_)) => ConcreteValue::Int(INT_EXTREME),
            (Mutator::IntExtreme, ConcreteValue::List(xs)) => ConcreteValue::List(map_ints(xs, |_| INT_EXTREME)?),
            (Mutator::IntExtreme, ConcreteValue::Tuple(xs)) => ConcreteValue::Tuple(map_ints(xs, |_| INT_EXTREME)?),
            (Mutator::DtypeSwap, ConcreteValue::Tensor(t)) => ConcreteValue::Tensor(swap_dtype(t, &table)),
            (Mutator::DtypeSwap, ConcreteValue::Dtype(d)) => ConcreteValue::Dtype(next_dtype(*d, &table)),
            (Mutator::RankUp, ConcreteValue::Tensor(t)) => {
                let mut shape = vec![2];
                shape.extend(&t.shape);
                ConcreteValue::Tensor(Tensor {
                    shape,
                    dtype: t.dtype,
                    lo: t.lo,
                    hi: t.hi,
                    elements: t.elements.as_ref().map(|e| e.iter().chain(e).copied().collect()),
                })
            }
            (Mutator::RankDown, ConcreteValue::Tensor(t)) if !t.shape.is_empty() => {
                let shape = t.shape[1..].to_vec();
                let n = shape.iter().product::<u64>() as usize;
                let elements = t.elements.as_ref().map(|e| {
                    if t.shape[0] == 0 {
                        vec![t.lo; n]
                    } else {
                        e[..n].to_vec()
                    }
                });
                ConcreteValue::Tensor(Tensor {
                    shape,
                    dtype: t.dtype,
                    lo: t.lo,
                    hi: t.hi,
                    elements,
                })
            }
            (Mutator::KindConfusion, ConcreteValue::Tensor(t)) => {
                let x = t.elements.as_ref().and_then(|e| e.first().copied()).unwrap_or(t.lo);
                ConcreteValue::Float(x)
            }
            (Mutator::KindConfusion, ConcreteValue::Int(x)) => {
                ConcreteValue::Tensor(Tensor::from_elements(vec![1], 3, vec![*x as f64]))
            }
            (Mutator::KindConfusion, ConcreteValue::Float(x)) => {
                ConcreteValue::Tensor(Tensor::from_elements(vec![1], 0, vec![*x]))
            }
            _ => return None,
        };
        let mut out = input.clone();
        out.set(param, new);
        Some(out)
    }
}

fn map_ints(xs: &[ConcreteValue], f: impl Fn(i64) -> i64) -> Option<Vec<ConcreteValue>> {
    if !xs.iter().any(|x| matches!(x, ConcreteValue::Int(_))) {
        return None;
    }
    Some(
        xs.iter()
            .map(|x| match x {
                ConcreteValue::Int(i) => ConcreteValue::Int(f(*i)),
                other => other.clone(),
            })
            .collect(),
    )
}

fn next_dtype(d: u32, table: &DtypeTable) -> u32 {
    (d + 1) % table.len() as u32
}

/// Same shape, next dtype code, elements coerced to the new kind.
fn swap_dtype(t: &Tensor, table: &DtypeTable) -> Tensor {
    let dtype = next_dtype(t.dtype, table);
    let coerce = |x: f64| match table.kind(dtype) {
        Some(DtypeKind::Bool) => (x != 0.0) as u8 as f64,
        Some(DtypeKind::Int) => x.trunc(),
        _ => x,
    };
    match &t.elements {
        Some(e) => {
            let el: Vec<f64> = e.iter().map(|&x| coerce(x)).collect();
            let mut out = Tensor::from_elements(t.shape.clone(), dtype, el);
            if out.elements.as_ref().is_some_and(|e| e.is_empty()) {
                out.lo = coerce(t.lo).min(coerce(t.hi));
                out.hi = coerce(t.hi).max(out.lo);
            }
            out
        }
        None => {
            let lo = coerce(t.lo);
            let hi = coerce(t.hi).max(lo);
            Tensor::summary(t.shape.clone(), dtype, lo, hi)
        }
    }
}

/// A random argument of type `ty`, not necessarily valid for the API.
pub fn random_value(rng: &mut dyn RngCore, ty: &TypeExpr, table: &DtypeTable) -> ConcreteValue {
    match ty {
        TypeExpr::Int => ConcreteValue::Int(match rng.gen_range(0..10) {
            0 => INT_EXTREME,
            1 => -INT_EXTREME,
            _ => rng.gen_range(-6..=10),
        }),
        TypeExpr::Float => ConcreteValue::Float(rng.gen_range(-100.0..100.0)),
        TypeExpr::Bool => ConcreteValue::Bool(rng.gen()),
        TypeExpr::Dtype => ConcreteValue::Dtype(rng.gen_range(0..table.len() as u32)),
        TypeExpr::Str => ConcreteValue::Str(["", "a", "mean", "none"][rng.gen_range(0..4)].to_string()),
        TypeExpr::Tensor => {
            let nd = rng.gen_range(0..=4);
            let shape: Vec<u64> = (0..nd).map(|_| rng.gen_range(0..=5)).collect();
            let dtype = rng.gen_range(0..table.len() as u32);
            ConcreteValue::Tensor(rand_tensor(rng, shape, dtype, table))
        }
        TypeExpr::List(e) | TypeExpr::Tuple(e) => {
            let n = rng.gen_range(0..=4);
            let xs = (0..n).map(|_| random_value(rng, e, table)).collect();
            if matches!(ty, TypeExpr::List(_)) {
                ConcreteValue::List(xs)
            } else {
                ConcreteValue::Tuple(xs)
            }
        }
        TypeExpr::Union(a, b) => {
            let arm = if rng.gen() { a } else { b };
            random_value(rng, arm, table)
        }
    }
}

pub fn random_input(rng: &mut dyn RngCore, sig: &ApiSignature, table: &DtypeTable) -> ApiInput {
    let mut input = ApiInput::new(&sig.api);
    for p in &sig.params {
        if !p.required && rng.gen_bool(0.3) {
            continue;
        }
        input.set(&p.name, random_value(rng, &p.ty, table));
    }
    input
}

#[derive(Debug, Clone)]
pub struct CollectConfig {
    pub random_budget: Duration,
    /// Cap on random inputs regardless of time.
    pub max_random: Option<usize>,
    pub seed: u64,
    pub backend: String,
}

impl Default for CollectConfig {
    fn default() -> Self {
        CollectConfig {
            random_budget: Duration::from_secs(30),
            max_random: None,
            seed: 0,
            backend: "cpu".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ErrorEntry {
    /// Distinct messages in first-seen order.
    pub messages: Vec<String>,
    /// Crash details with the input that caused them.
    pub crashes: Vec<(String, ApiInput)>,
    pub executed: usize,
}

fn push_unique(list: &mut Vec<String>, keys: &mut BTreeSet<String>, msg: &str) -> bool {
    if keys.insert(normalize_message(msg)) {
        list.push(msg.to_string());
        true
    } else {
        false
    }
}

/// Run every applicable mutation of every seed, then random inputs until
/// the budget runs out, collecting distinct error messages.
pub fn collect_errors(
    sig: &ApiSignature,
    seeds: &[ApiInput],
    mutators: &[Mutator],
    ex: &mut dyn Executor,
    cfg: &CollectConfig,
) -> Result<ErrorEntry, ExecError> {
    let mut entry = ErrorEntry::default();
    let mut keys = BTreeSet::new();
    let mut crash_keys = BTreeSet::new();
    let mut run = |input: ApiInput, entry: &mut ErrorEntry| -> Result<(), ExecError> {
        let req = ExecRequest {
            id: entry.executed as u64,
            api: sig.api.clone(),
            backend: cfg.backend.clone(),
            input,
            want_outputs: false,
        };
        let res = ex.run(&req)?;
        entry.executed += 1;
        let msg = res.error_message.unwrap_or_default();
        match res.status {
            ExecStatus::Error => {
                push_unique(&mut entry.messages, &mut keys, &msg);
            }
            ExecStatus::Crash => {
                if crash_keys.insert(normalize_message(&msg)) {
                    entry.crashes.push((msg, req.input));
                }
            }
            ExecStatus::Ok | ExecStatus::Timeout => {}
        }
        Ok(())
    };
    for seed in seeds {
        for m in mutators {
            for p in &sig.params {
                if let Some(mutant) = m.apply(seed, sig, &p.name) {
                    run(mutant, &mut entry)?;
                }
            }
        }
    }
    let table = DtypeTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut n = 0usize;
    while start.elapsed() < cfg.random_budget && cfg.max_random.is_none_or(|m| n < m) {
        run(random_input(&mut rng, sig, &table), &mut entry)?;
        n += 1;
    }
    Ok(entry)
}

/// Distinct error messages per API for one library.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorDb {
    pub library: String,
    pub apis: BTreeMap<String, Vec<String>>,
}

impl ErrorDb {
    pub fn new(library: &str) -> ErrorDb {
        ErrorDb {
            library: library.to_string(),
            apis: BTreeMap::new(),
        }
    }

    /// Add a message unless an equal one (after normalization) is present.
    pub fn insert(&mut self, api: &str, msg: &str) -> bool {
        let list = self.apis.entry(api.to_string()).or_default();
        let key = normalize_message(msg);
        if list.iter().any(|m| normalize_message(m) == key) {
            return false;
        }
        list.push(msg.to_string());
        true
    }

    pub fn merge(&mut self, api: &str, entry: &ErrorEntry) {
        self.apis.entry(api.to_string()).or_default();
        for m in &entry.messages {
            self.insert(api, m);
        }
    }

    pub fn messages(&self, api: &str) -> &[String] {
        self.apis.get(api).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn mean_per_api(&self) -> f64 {
        if self.apis.is_empty() {
            return 0.0;
        }
        self.apis.values().map(Vec::len).sum::<usize>() as f64 / self.apis.len() as f64
    }

    pub fn to_json(&self) -> Value {
        json!({"library": self.library, "apis": self.apis})
    }

    pub fn from_json(v: &Value) -> Result<ErrorDb, String> {
        let library = v["library"].as_str().ok_or("missing 'library'")?.to_string();
        let apis = v["apis"].as_object().ok_or("missing 'apis'")?;
        let mut db = ErrorDb::new(&library);
        for (api, msgs) in apis {
            let msgs = msgs.as_array().ok_or_else(|| format!("'{api}' is not a list"))?;
            db.apis.entry(api.clone()).or_default();
            for m in msgs {
                db.insert(api, m.as_str().ok_or_else(|| format!("non-string message under '{api}'"))?);
            }
        }
        Ok(db)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())? + "\n")
    }

    pub fn load(path: &Path) -> std::io::Result<ErrorDb> {
        let text = std::fs::read_to_string(path)?;
        let v: Value = serde_json::from_str(&text)?;
        ErrorDb::from_json(&v).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

pub fn errors_path(root: &Path, library: &str) -> std::path::PathBuf {
    root.join("errors").join(format!("{library}.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: &[u64]) -> ConcreteValue {
        let n = shape.iter().product::<u64>() as usize;
        ConcreteValue::Tensor(Tensor::from_elements(shape.to_vec(), 0, (0..n).map(|i| i as f64).collect()))
    }

    fn sig() -> ApiSignature {
        ApiSignature::new(
            "t.f",
            &[
                ("input", TypeExpr::Tensor, true),
                ("dim", TypeExpr::Int, true),
                ("alpha", TypeExpr::Float, false),
            ],
        )
    }

    fn input() -> ApiInput {
        ApiInput::new("t.f")
            .with("input", tensor(&[3, 4]))
            .with("dim", ConcreteValue::Int(1))
            .with("alpha", ConcreteValue::Float(0.5))
    }

    fn shape_of(i: &ApiInput) -> Vec<u64> {
        match i.get("input") {
            Some(ConcreteValue::Tensor(t)) => t.shape.clone(),
            _ => panic!(),
        }
    }

    #[test]
    fn rank_mutators() {
        let up = Mutator::RankUp.apply(&input(), &sig(), "input").unwrap();
        assert_eq!(shape_of(&up), vec![2, 3, 4]);
        let down = Mutator::RankDown.apply(&input(), &sig(), "input").unwrap();
        assert_eq!(shape_of(&down), vec![4]);
        assert_eq!(shape_of(&Mutator::EmptyTensor.apply(&input(), &sig(), "input").unwrap()), vec![0, 4]);
    }

    #[test]
    fn drop_only_optional() {
        assert!(Mutator::DropOptional.apply(&input(), &sig(), "dim").is_none());
        let d = Mutator::DropOptional.apply(&input(), &sig(), "alpha").unwrap();
        assert_eq!(d.get("alpha"), Some(&ConcreteValue::None));
    }

    #[test]
    fn ints() {
        let n = Mutator::IntNegate.apply(&input(), &sig(), "dim").unwrap();
        assert_eq!(n.get("dim"), Some(&ConcreteValue::Int(-1)));
        let e = Mutator::IntExtreme.apply(&input(), &sig(), "dim").unwrap();
        assert_eq!(e.get("dim"), Some(&ConcreteValue::Int(2147483647)));
    }

    #[test]
    fn db_dedups_after_normalization() {
        let mut db = ErrorDb::new("t");
        assert!(db.insert("t.f", "dim 3 out of range"));
        assert!(!db.insert("t.f", "dim  7 out of range"));
        assert!(db.insert("t.f", "other"));
        assert_eq!(db.messages("t.f").len(), 2);
        assert_eq!(ErrorDb::from_json(&db.to_json()).unwrap(), db);
    }
}
