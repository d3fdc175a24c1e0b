//! Built-in reference targets: small tensor APIs with executable validity
//! checks, authored ground-truth constraints, seeded defects on the "gpu"
//! backend and labelled branches.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use num_integer::Integer;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{ExecResult, ExecStatus};
use crate::dsl::{compile_rule, TypeExpr, TypedRule};
use crate::solver::{build_layout, Bounds, Layout};
use crate::value::{ApiInput, ApiSignature, ConcreteValue, DtypeKind, DtypeTable, Tensor};

pub const LIBRARY: &str = "ref";

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok(Vec<ConcreteValue>),
    Error(String),
    /// Simulated process-level abort; the subprocess server turns this into a
    /// real abort.
    Crash(String),
}

impl Outcome {
    pub fn status(&self) -> ExecStatus {
        match self {
            Outcome::Ok(_) => ExecStatus::Ok,
            Outcome::Error(_) => ExecStatus::Error,
            Outcome::Crash(_) => ExecStatus::Crash,
        }
    }

    pub fn into_result(self, id: u64, want_outputs: bool, branches: Vec<String>, wall_time_us: u64) -> ExecResult {
        let status = self.status();
        let (error_message, outputs) = match self {
            Outcome::Ok(o) => (None, want_outputs.then_some(o)),
            Outcome::Error(m) | Outcome::Crash(m) => (Some(m), None),
        };
        ExecResult {
            id,
            status,
            error_message,
            outputs,
            covered_branches: Some(branches),
            wall_time_us,
        }
    }
}

/// A ground-truth constraint: a rule applied to a parameter tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rule: TypedRule,
    pub params: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefectEffect {
    Crash,
    NanOnGpu,
    Overflow,
    ValueSkew,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Defect {
    pub backend: &'static str,
    pub trigger: &'static str,
    pub effect: DefectEffect,
}

type Body = fn(&ApiInput, bool, &mut Branches) -> Outcome;
type SeedFn = fn(&mut dyn rand::RngCore, &DtypeTable) -> ApiInput;

pub struct RefTarget {
    pub name: &'static str,
    pub api: String,
    pub sig: ApiSignature,
    pub doc: &'static str,
    /// Error message prefixes the target can produce.
    pub errors: &'static [&'static str],
    pub defects: &'static [Defect],
    /// Whether seeds can cover three ranks and two dtypes.
    pub diverse_rank: bool,
    gt: &'static [(&'static str, &'static [&'static str])],
    body: Body,
    seed: SeedFn,
}

impl std::fmt::Debug for RefTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RefTarget").field("api", &self.api).finish()
    }
}

pub struct Branches {
    name: &'static str,
    hit: Vec<String>,
}

impl Branches {
    fn mark(&mut self, b: u32) {
        self.hit.push(format!("{}.b{b}", self.name));
    }
}

impl RefTarget {
    /// Run on `backend` ("cpu" or "gpu"); returns the outcome and the
    /// branches taken.
    pub fn execute(&self, input: &ApiInput, backend: &str) -> (Outcome, Vec<String>) {
        let mut br = Branches {
            name: self.name,
            hit: Vec::new(),
        };
        let gpu = match backend {
            "cpu" => false,
            "gpu" => true,
            other => return (Outcome::Error(format!("unknown backend '{other}'")), br.hit),
        };
        if let Err(e) = self.sig.validate(input) {
            br.mark(99);
            return (Outcome::Error(format!("invalid arguments: {e}")), br.hit);
        }
        let out = (self.body)(input, gpu, &mut br);
        (out, br.hit)
    }

    /// Validity on the reference backend.
    pub fn is_valid(&self, input: &ApiInput) -> bool {
        matches!(self.execute(input, "cpu").0, Outcome::Ok(_))
    }

    pub fn ground_truth(&self) -> Vec<GroundTruth> {
        self.gt
            .iter()
            .map(|(text, params)| GroundTruth {
                rule: compile_rule(text).unwrap_or_else(|e| panic!("bad ground truth {text}: {e}")),
                params: params.iter().map(|p| p.to_string()).collect(),
            })
            .collect()
    }

    /// Solver layout at the given bounds over the default dtype table.
    pub fn layout(&self, bounds: &Bounds) -> Layout {
        build_layout(&self.sig, bounds, &DtypeTable::default(), &BTreeMap::new()).expect("reference signatures lower")
    }

    /// `count` valid inputs drawn directly from the valid space.
    pub fn seed_inputs(&self, count: usize, rng: &mut dyn rand::RngCore) -> Vec<ApiInput> {
        let table = DtypeTable::default();
        (0..count).map(|_| (self.seed)(rng, &table)).collect()
    }
}

pub fn catalog() -> &'static [RefTarget] {
    static CATALOG: OnceLock<Vec<RefTarget>> = OnceLock::new();
    CATALOG.get_or_init(build_catalog)
}

/// Look up by full (`ref.narrow`) or short (`narrow`) name.
pub fn target(api: &str) -> Option<&'static RefTarget> {
    let short = api.strip_prefix("ref.").unwrap_or(api);
    catalog().iter().find(|t| t.name == short)
}

pub const DIM_VALID: &str = "{v_1: tensor, v_2: int} |= -1 * ndim(v_1) <= v_2 and v_2 <= ndim(v_1) - 1";

pub const BROADCAST: &str = "{v_1: tensor, v_2: tensor} |= if ndim(v_1) = ndim(v_2) then forall i in [0, ndim(v_1) - 1] : shape(v_1, i) = shape(v_2, i) or shape(v_1, i) = 1 or shape(v_2, i) = 1 else if ndim(v_1) > ndim(v_2) then forall i in [0, ndim(v_2) - 1] : shape(v_1, ndim(v_1) - ndim(v_2) + i) = shape(v_2, i) or shape(v_1, ndim(v_1) - ndim(v_2) + i) = 1 or shape(v_2, i) = 1 else forall i in [0, ndim(v_1) - 1] : shape(v_2, ndim(v_2) - ndim(v_1) + i) = shape(v_1, i) or shape(v_2, ndim(v_2) - ndim(v_1) + i) = 1 or shape(v_1, i) = 1";

pub const SAME_DTYPE: &str = "{v_1: tensor, v_2: tensor} |= dtype_(v_1) = dtype_(v_2)";

fn build_catalog() -> Vec<RefTarget> {
    use TypeExpr::*;
    let sig = |name: &str, params: &[(&str, TypeExpr, bool)]| ApiSignature::new(&format!("{LIBRARY}.{name}"), params);
    let mut v = vec![
        RefTarget {
            name: "add_broadcast",
            api: "ref.add_broadcast".into(),
            sig: sig("add_broadcast", &[("input", Tensor, true), ("other", Tensor, true)]),
            doc: "add_broadcast(input, other) -> Tensor\n\
                  Adds other to input elementwise. The tensors input and other must have the same dtype \
                  and broadcastable shapes: aligned from the trailing dimension, each pair of sizes is \
                  equal or one of them is 1; missing leading dimensions are treated as 1.",
            errors: &[
                "expected both tensors to have the same dtype",
                "sizes must be equal or 1 at each trailing dimension",
            ],
            defects: &[Defect {
                backend: "gpu",
                trigger: "any element of input or other is negative",
                effect: DefectEffect::NanOnGpu,
            }],
            diverse_rank: true,
            gt: &[(SAME_DTYPE, &["input", "other"]), (BROADCAST, &["input", "other"])],
            body: add_broadcast,
            seed: seed_add_broadcast,
        },
        RefTarget {
            name: "narrow",
            api: "ref.narrow".into(),
            sig: sig(
                "narrow",
                &[("input", Tensor, true), ("dim", Int, true), ("start", Int, true), ("length", Int, true)],
            ),
            doc: "narrow(input, dim, start, length) -> Tensor\n\
                  Returns the slice of input along dimension dim covering indices start to start + length - 1. \
                  dim may be negative and counts from the last dimension. start and length must be \
                  non-negative and start + length must not exceed the size of dimension dim.",
            errors: &[
                "narrow() cannot be applied to a 0-dim tensor",
                "Dimension out of range",
                "start must be non-negative",
                "length must be non-negative",
                "exceeds dimension size",
            ],
            defects: &[],
            diverse_rank: true,
            gt: &[
                (DIM_VALID, &["input", "dim"]),
                ("{v_1: int} |= v_1 >= 0", &["start"]),
                ("{v_1: int} |= v_1 >= 0", &["length"]),
                (
                    "{v_1: tensor, v_2: int, v_3: int, v_4: int} |= v_3 + v_4 <= shape(v_1, v_2)",
                    &["input", "dim", "start", "length"],
                ),
            ],
            body: narrow,
            seed: seed_narrow,
        },
        RefTarget {
            name: "argmax",
            api: "ref.argmax".into(),
            sig: sig("argmax", &[("input", Tensor, true), ("dim", Int, true)]),
            doc: "argmax(input, dim) -> Tensor\n\
                  Returns the indices of the maximum values of input along dimension dim, which may be \
                  negative. An empty reduction yields index 0.",
            errors: &["Dimension out of range"],
            defects: &[],
            diverse_rank: true,
            gt: &[(DIM_VALID, &["input", "dim"])],
            body: argmax,
            seed: seed_argmax,
        },
        RefTarget {
            name: "channel_shuffle",
            api: "ref.channel_shuffle".into(),
            sig: sig("channel_shuffle", &[("input", Tensor, true), ("groups", Int, true)]),
            doc: "channel_shuffle(input, groups) -> Tensor\n\
                  Divides the channels of input (dimension 1) into groups groups and interleaves them. \
                  input must have more than 2 dimensions, groups must be positive and the number of \
                  channels must be divisible by groups.",
            errors: &[
                "channel_shuffle expects input with > 2 dims",
                "Number of groups to divide channels in must be positive",
                "Number of channels must be divisible by groups",
            ],
            defects: &[Defect {
                backend: "gpu",
                trigger: "groups > shape(input, 1)",
                effect: DefectEffect::Crash,
            }],
            diverse_rank: true,
            gt: &[
                ("{v_1: tensor} |= ndim(v_1) >= 3", &["input"]),
                ("{v_1: int} |= v_1 >= 1", &["groups"]),
                (
                    "{v_1: tensor, v_2: int} |= exists k in [0, shape(v_1, 1)] : k * v_2 = shape(v_1, 1)",
                    &["input", "groups"],
                ),
            ],
            body: channel_shuffle,
            seed: seed_channel_shuffle,
        },
        RefTarget {
            name: "matmul2d",
            api: "ref.matmul2d".into(),
            sig: sig("matmul2d", &[("input", Tensor, true), ("other", Tensor, true)]),
            doc: "matmul2d(input, other) -> Tensor\n\
                  Matrix product of the 2-D tensors input (n x k) and other (k x m). The inner sizes \
                  must agree and both operands must have the same dtype.",
            errors: &[
                "matmul2d: expected 2-D input",
                "matmul2d: expected 2-D other",
                "shapes cannot be multiplied",
                "expected mat1 and mat2 to have the same dtype",
            ],
            defects: &[Defect {
                backend: "gpu",
                trigger: "inner dimension larger than 16",
                effect: DefectEffect::ValueSkew,
            }],
            diverse_rank: false,
            gt: &[
                ("{v_1: tensor} |= ndim(v_1) = 2", &["input"]),
                ("{v_1: tensor} |= ndim(v_1) = 2", &["other"]),
                ("{v_1: tensor, v_2: tensor} |= shape(v_1, 1) = shape(v_2, 0)", &["input", "other"]),
                (SAME_DTYPE, &["input", "other"]),
            ],
            body: matmul2d,
            seed: seed_matmul2d,
        },
        RefTarget {
            name: "lcm",
            api: "ref.lcm".into(),
            sig: sig("lcm", &[("input", Tensor, true), ("other", Tensor, true)]),
            doc: "lcm(input, other) -> Tensor\n\
                  Elementwise least common multiple of input and other. Both must have an integer dtype \
                  and exactly the same shape.",
            errors: &[
                "lcm is only implemented for integer dtypes",
                "The size of tensor a must match the size of tensor b",
            ],
            defects: &[Defect {
                backend: "gpu",
                trigger: "a result does not fit in int32",
                effect: DefectEffect::Overflow,
            }],
            diverse_rank: true,
            gt: &[
                ("{v_1: tensor} |= dtype_(v_1) = 2 or dtype_(v_1) = 3", &["input"]),
                ("{v_1: tensor} |= dtype_(v_1) = 2 or dtype_(v_1) = 3", &["other"]),
                ("{v_1: tensor, v_2: tensor} |= ndim(v_1) = ndim(v_2)", &["input", "other"]),
                (
                    "{v_1: tensor, v_2: tensor} |= forall i in [0, ndim(v_1) - 1] : shape(v_1, i) = shape(v_2, i)",
                    &["input", "other"],
                ),
            ],
            body: lcm,
            seed: seed_lcm,
        },
    ];
    v.sort_by(|a, b| a.name.cmp(b.name));
    v
}

// ---- argument access; the signature has been validated ----

fn tensor<'a>(a: &'a ApiInput, name: &str) -> &'a Tensor {
    match a.get(name) {
        Some(ConcreteValue::Tensor(t)) => t,
        _ => unreachable!("validated tensor argument {name}"),
    }
}

fn int(a: &ApiInput, name: &str) -> i64 {
    match a.get(name) {
        Some(ConcreteValue::Int(i)) => *i,
        _ => unreachable!("validated int argument {name}"),
    }
}

fn dtype_name(code: u32) -> String {
    DtypeTable::default()
        .get(code)
        .map(|d| d.name.clone())
        .unwrap_or_else(|| format!("dtype{code}"))
}

fn numel(shape: &[u64]) -> usize {
    shape.iter().product::<u64>() as usize
}

fn out_tensor(shape: Vec<u64>, dtype: u32, el: Option<Vec<f64>>, lo: f64, hi: f64) -> ConcreteValue {
    ConcreteValue::Tensor(match el {
        Some(e) => Tensor::from_elements(shape, dtype, e),
        None => Tensor::summary(shape, dtype, lo, hi),
    })
}

pub fn broadcast_shape(a: &[u64], b: &[u64]) -> Option<Vec<u64>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let x = if i < a.len() { a[a.len() - 1 - i] } else { 1 };
        let y = if i < b.len() { b[b.len() - 1 - i] } else { 1 };
        out[n - 1 - i] = match (x, y) {
            _ if x == y => x,
            (1, _) => y,
            (_, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Outputs with more elements are returned as summaries.
pub const OUTPUT_CAP: usize = 4096;
/// Positions sampled when summarizing a large output.
const PROBE: usize = 64;

/// Source offset of flat output position `k`.
fn broadcast_offset(src: &[u64], out: &[u64], mut k: usize) -> usize {
    let pad = out.len() - src.len();
    let (mut off, mut stride) = (0usize, 1usize);
    for d in (0..out.len()).rev() {
        let i = k % out[d] as usize;
        k /= out[d] as usize;
        if d >= pad {
            let s = src[d - pad] as usize;
            if s != 1 {
                off += i * stride;
            }
            stride *= s;
        }
    }
    off
}

/// Source offset for every element of `out`, reading from a tensor of shape
/// `src` broadcast against it.
fn broadcast_offsets(src: &[u64], out: &[u64]) -> Vec<usize> {
    let n = out.len();
    let pad = n - src.len();
    let mut strides = vec![0usize; n];
    let mut acc = 1usize;
    for i in (0..src.len()).rev() {
        strides[pad + i] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i] as usize;
    }
    let total = numel(out);
    let mut offs = Vec::with_capacity(total);
    let mut idx = vec![0u64; n];
    let mut off = 0usize;
    for _ in 0..total {
        offs.push(off);
        for d in (0..n).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out[d] {
                break;
            }
            off -= strides[d] * idx[d] as usize;
            idx[d] = 0;
        }
    }
    offs
}

fn add_broadcast(a: &ApiInput, gpu: bool, br: &mut Branches) -> Outcome {
    let (x, y) = (tensor(a, "input"), tensor(a, "other"));
    if x.dtype != y.dtype {
        br.mark(0);
        return Outcome::Error(format!(
            "expected both tensors to have the same dtype, but got {} and {}",
            dtype_name(x.dtype),
            dtype_name(y.dtype)
        ));
    }
    let Some(shape) = broadcast_shape(&x.shape, &y.shape) else {
        br.mark(1);
        return Outcome::Error(format!(
            "sizes must be equal or 1 at each trailing dimension, but got {:?} and {:?}",
            x.shape, y.shape
        ));
    };
    br.mark(2);
    if numel(&shape) == 0 {
        br.mark(3);
    }
    let (Some(xe), Some(ye)) = (&x.elements, &y.elements) else {
        return Outcome::Ok(vec![out_tensor(shape, x.dtype, None, x.lo + y.lo, x.hi + y.hi)]);
    };
    let add = |p: f64, q: f64| if gpu && (p < 0.0 || q < 0.0) { f64::NAN } else { p + q };
    let total = numel(&shape);
    if total > OUTPUT_CAP {
        // summarized over a fixed probe of output positions
        let nan = gpu && (xe.iter().any(|v| *v < 0.0) || ye.iter().any(|v| *v < 0.0));
        if nan {
            br.mark(4);
            return Outcome::Ok(vec![out_tensor(shape, x.dtype, None, f64::NAN, f64::NAN)]);
        }
        let step = (total / PROBE).max(1);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in (0..total).step_by(step) {
            let v = add(xe[broadcast_offset(&x.shape, &shape, k)], ye[broadcast_offset(&y.shape, &shape, k)]);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        return Outcome::Ok(vec![out_tensor(shape, x.dtype, None, lo, hi)]);
    }
    let ox = broadcast_offsets(&x.shape, &shape);
    let oy = broadcast_offsets(&y.shape, &shape);
    let out: Vec<f64> = ox.iter().zip(&oy).map(|(&i, &j)| add(xe[i], ye[j])).collect();
    if out.iter().any(|v| v.is_nan()) {
        br.mark(4);
    }
    let el = Some(out);
    Outcome::Ok(vec![out_tensor(shape, x.dtype, el, x.lo + y.lo, x.hi + y.hi)])
}

fn dim_error(dim: i64, nd: usize) -> Outcome {
    let n = nd as i64;
    Outcome::Error(format!(
        "Dimension out of range (expected to be in range of [{}, {}], but got {dim})",
        -n,
        n - 1
    ))
}

fn resolve(dim: i64, nd: usize) -> Option<usize> {
    crate::value::resolve_dim(dim, nd).ok()
}

/// (outer, size, inner) around dimension `d`.
fn split(shape: &[u64], d: usize) -> (usize, usize, usize) {
    (numel(&shape[..d]), shape[d] as usize, numel(&shape[d + 1..]))
}

fn narrow(a: &ApiInput, _gpu: bool, br: &mut Branches) -> Outcome {
    let x = tensor(a, "input");
    let (dim, start, length) = (int(a, "dim"), int(a, "start"), int(a, "length"));
    if x.ndim() == 0 {
        br.mark(0);
        return Outcome::Error("narrow() cannot be applied to a 0-dim tensor.".into());
    }
    let Some(d) = resolve(dim, x.ndim()) else {
        br.mark(1);
        return dim_error(dim, x.ndim());
    };
    if start < 0 {
        br.mark(2);
        return Outcome::Error(format!("start must be non-negative, got {start}"));
    }
    if length < 0 {
        br.mark(3);
        return Outcome::Error(format!("length must be non-negative, got {length}"));
    }
    let size = x.shape[d] as i64;
    if start + length > size {
        br.mark(4);
        return Outcome::Error(format!(
            "start ({start}) + length ({length}) exceeds dimension size ({size})."
        ));
    }
    br.mark(if length == 0 { 6 } else { 5 });
    let mut shape = x.shape.clone();
    shape[d] = length as u64;
    let el = x.elements.as_ref().map(|e| {
        let (outer, size, inner) = split(&x.shape, d);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for j in start as usize..(start + length) as usize {
                let base = (o * size + j) * inner;
                out.extend_from_slice(&e[base..base + inner]);
            }
        }
        out
    });
    Outcome::Ok(vec![out_tensor(shape, x.dtype, el, x.lo, x.hi)])
}

fn argmax(a: &ApiInput, _gpu: bool, br: &mut Branches) -> Outcome {
    let x = tensor(a, "input");
    let dim = int(a, "dim");
    let Some(d) = resolve(dim, x.ndim()) else {
        br.mark(if x.ndim() == 0 { 0 } else { 1 });
        return dim_error(dim, x.ndim());
    };
    br.mark(2);
    let mut shape = x.shape.clone();
    shape.remove(d);
    let (outer, size, inner) = split(&x.shape, d);
    if size == 0 {
        br.mark(3);
    }
    let int64 = DtypeTable::default().by_name("int64").map(|d| d.code).unwrap_or(3);
    let el = x.elements.as_ref().map(|e| {
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = 0usize;
                for j in 1..size {
                    let (v, b) = (e[(o * size + j) * inner + i], e[(o * size + best) * inner + i]);
                    if v > b || (v.is_nan() && !b.is_nan()) {
                        best = j;
                    }
                }
                out.push(best as f64);
            }
        }
        out
    });
    Outcome::Ok(vec![out_tensor(shape, int64, el, 0.0, size.saturating_sub(1) as f64)])
}

fn channel_shuffle(a: &ApiInput, gpu: bool, br: &mut Branches) -> Outcome {
    let x = tensor(a, "input");
    let groups = int(a, "groups");
    if x.ndim() < 3 {
        br.mark(0);
        return Outcome::Error(format!(
            "channel_shuffle expects input with > 2 dims, but got input with sizes {:?}",
            x.shape
        ));
    }
    let c = x.shape[1] as i64;
    if gpu && groups > c {
        // the kernel divides by channels / groups
        br.mark(4);
        return Outcome::Crash("SIGFPE: integer division by zero in channel_shuffle kernel".into());
    }
    if groups <= 0 {
        br.mark(1);
        return Outcome::Error(format!(
            "Number of groups to divide channels in must be positive. Value of groups:{groups}"
        ));
    }
    if c % groups != 0 {
        br.mark(2);
        return Outcome::Error(format!(
            "Number of channels must be divisible by groups. Got {c} channels and {groups} groups."
        ));
    }
    br.mark(3);
    let el = x.elements.as_ref().map(|e| {
        let (outer, cc, inner) = split(&x.shape, 1);
        let g = groups as usize;
        let per = cc / g;
        let mut out = Vec::with_capacity(e.len());
        for o in 0..outer {
            for ch in 0..cc {
                let src = (ch % g) * per + ch / g;
                let base = (o * cc + src) * inner;
                out.extend_from_slice(&e[base..base + inner]);
            }
        }
        out
    });
    Outcome::Ok(vec![out_tensor(x.shape.clone(), x.dtype, el, x.lo, x.hi)])
}

fn matmul2d(a: &ApiInput, gpu: bool, br: &mut Branches) -> Outcome {
    let (x, y) = (tensor(a, "input"), tensor(a, "other"));
    if x.ndim() != 2 {
        br.mark(0);
        return Outcome::Error(format!("matmul2d: expected 2-D input, got {}-D", x.ndim()));
    }
    if y.ndim() != 2 {
        br.mark(1);
        return Outcome::Error(format!("matmul2d: expected 2-D other, got {}-D", y.ndim()));
    }
    let (n, k, m) = (x.shape[0] as usize, x.shape[1] as usize, y.shape[1] as usize);
    if y.shape[0] as usize != k {
        br.mark(2);
        return Outcome::Error(format!(
            "mat1 and mat2 shapes cannot be multiplied ({}x{} and {}x{})",
            n, k, y.shape[0], m
        ));
    }
    if x.dtype != y.dtype {
        br.mark(3);
        return Outcome::Error(format!(
            "expected mat1 and mat2 to have the same dtype, but got: {} != {}",
            dtype_name(x.dtype),
            dtype_name(y.dtype)
        ));
    }
    br.mark(4);
    let skew = if !gpu {
        0.0
    } else if k > 16 {
        br.mark(5);
        0.5
    } else {
        1e-6
    };
    let el = match (&x.elements, &y.elements) {
        (Some(xe), Some(ye)) => {
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                for l in 0..k {
                    let p = xe[i * k + l];
                    for j in 0..m {
                        out[i * m + j] += p * ye[l * m + j];
                    }
                }
            }
            out.iter_mut().for_each(|v| *v += skew);
            Some(out)
        }
        _ => None,
    };
    let bound = x.lo.abs().max(x.hi.abs()) * y.lo.abs().max(y.hi.abs()) * k as f64;
    Outcome::Ok(vec![out_tensor(vec![n as u64, m as u64], x.dtype, el, -bound, bound)])
}

fn lcm(a: &ApiInput, gpu: bool, br: &mut Branches) -> Outcome {
    let (x, y) = (tensor(a, "input"), tensor(a, "other"));
    let table = DtypeTable::default();
    for (t, b) in [(x, 0), (y, 1)] {
        if table.kind(t.dtype) != Some(DtypeKind::Int) {
            br.mark(b);
            return Outcome::Error(format!(
                "lcm is only implemented for integer dtypes, got {}",
                dtype_name(t.dtype)
            ));
        }
    }
    if x.shape != y.shape {
        br.mark(2);
        let n = x.ndim().max(y.ndim());
        let at = |s: &[u64], i: usize| if i < s.len() { s[i] as i64 } else { -1 };
        let d = (0..n).find(|&i| at(&x.shape, i) != at(&y.shape, i)).unwrap_or(0);
        return Outcome::Error(format!(
            "The size of tensor a ({}) must match the size of tensor b ({}) at non-singleton dimension {d}",
            at(&x.shape, d),
            at(&y.shape, d)
        ));
    }
    br.mark(3);
    let el = match (&x.elements, &y.elements) {
        (Some(xe), Some(ye)) => {
            let mut out = Vec::with_capacity(xe.len());
            for (&p, &q) in xe.iter().zip(ye) {
                let (p, q) = (p as i64, q as i64);
                let g = p.gcd(&q);
                let v = if g == 0 { 0 } else { (p / g) as i128 * q as i128 }.abs();
                if gpu && v > i32::MAX as i128 {
                    br.mark(4);
                    return Outcome::Error("overflow: lcm result does not fit in int32".into());
                }
                out.push(v as f64);
            }
            Some(out)
        }
        _ => None,
    };
    let dtype = x.dtype.max(y.dtype);
    let hi = (x.lo.abs().max(x.hi.abs()) * y.lo.abs().max(y.hi.abs())).max(0.0);
    Outcome::Ok(vec![out_tensor(x.shape.clone(), dtype, el, 0.0, hi)])
}

// ---- seed generators ----

fn rand_shape(rng: &mut dyn rand::RngCore, nd: usize) -> Vec<u64> {
    (0..nd)
        .map(|_| match rng.gen_range(0..10) {
            0 => 0,
            1 | 2 => 1,
            _ => rng.gen_range(2..=6),
        })
        .collect()
}

/// A tensor with sampled elements; complex tensors carry a range only.
pub fn rand_tensor(rng: &mut dyn rand::RngCore, shape: Vec<u64>, dtype: u32, table: &DtypeTable) -> Tensor {
    let n = numel(&shape);
    let kind = table.kind(dtype).unwrap_or(DtypeKind::Float);
    let (lo, hi): (f64, f64) = match kind {
        DtypeKind::Bool => (0.0, 1.0),
        DtypeKind::Int => (rng.gen_range(-20..=0) as f64, rng.gen_range(1..=20) as f64),
        _ => (rng.gen_range(-10.0..0.0), rng.gen_range(0.0..10.0)),
    };
    if kind == DtypeKind::Complex {
        return Tensor::summary(shape, dtype, lo, hi);
    }
    let el: Vec<f64> = (0..n)
        .map(|_| match kind {
            DtypeKind::Float => rng.gen_range(lo..=hi),
            _ => rng.gen_range(lo as i64..=hi as i64) as f64,
        })
        .collect();
    Tensor {
        shape,
        dtype,
        lo,
        hi,
        elements: Some(el),
    }
}

fn rand_dtype(rng: &mut dyn rand::RngCore, table: &DtypeTable) -> u32 {
    rng.gen_range(0..table.len() as u32)
}

fn tv(t: Tensor) -> ConcreteValue {
    ConcreteValue::Tensor(t)
}

fn seed_add_broadcast(rng: &mut dyn rand::RngCore, table: &DtypeTable) -> ApiInput {
    let nd = rng.gen_range(0..=4);
    let full = rand_shape(rng, nd);
    let part = |rng: &mut dyn rand::RngCore| -> Vec<u64> {
        let keep = rng.gen_range(0..=nd);
        full[nd - keep..]
            .iter()
            .map(|&d| if rng.gen_bool(0.3) { 1 } else { d })
            .collect()
    };
    let (a, b) = if rng.gen_bool(0.5) {
        (full.clone(), part(rng))
    } else {
        (part(rng), full.clone())
    };
    let dt = rand_dtype(rng, table);
    ApiInput::new("ref.add_broadcast")
        .with("input", tv(rand_tensor(rng, a, dt, table)))
        .with("other", tv(rand_tensor(rng, b, dt, table)))
}

fn seed_narrow(rng: &mut dyn rand::RngCore, table: &DtypeTable) -> ApiInput {
    let nd = rng.gen_range(1..=4);
    let shape = rand_shape(rng, nd);
    let d = rng.gen_range(0..nd);
    let dim = if rng.gen_bool(0.3) { d as i64 - nd as i64 } else { d as i64 };
    let size = shape[d] as i64;
    let start = rng.gen_range(0..=size);
    let length = rng.gen_range(0..=size - start);
    let dt = rand_dtype(rng, table);
    ApiInput::new("ref.narrow")
        .with("input", tv(rand_tensor(rng, shape, dt, table)))
        .with("dim", ConcreteValue::Int(dim))
        .with("start", ConcreteValue::Int(start))
        .with("length", ConcreteValue::Int(length))
}

fn seed_argmax(rng: &mut dyn rand::RngCore, table: &DtypeTable) -> ApiInput {
    let nd = rng.gen_range(1..=4);
    let shape = rand_shape(rng, nd);
    let dim = rng.gen_range(-(nd as i64)..nd as i64);
    let dt = rand_dtype(rng, table);
    ApiInput::new("ref.argmax")
        .with("input", tv(rand_tensor(rng, shape, dt, table)))
        .with("dim", ConcreteValue::Int(dim))
}

fn seed_channel_shuffle(rng: &mut dyn rand::RngCore, table: &DtypeTable) -> ApiInput {
    let nd = rng.gen_range(3..=5);
    let mut shape = rand_shape(rng, nd);
    let groups = rng.gen_range(1..=4i64);
    let mult = *[0u64, 1, 1, 2, 3].choose(rng).unwrap();
    shape[1] = groups as u64 * mult;
    let dt = rand_dtype(rng, table);
    ApiInput::new("ref.channel_shuffle")
        .with("input", tv(rand_tensor(rng, shape, dt, table)))
        .with("groups", ConcreteValue::Int(groups))
}

fn seed_matmul2d(rng: &mut dyn rand::RngCore, table: &DtypeTable) -> ApiInput {
    let dim = |rng: &mut dyn rand::RngCore| rng.gen_range(0..=7u64);
    let (n, k, m) = (dim(rng), dim(rng), dim(rng));
    let dt = rand_dtype(rng, table);
    ApiInput::new("ref.matmul2d")
        .with("input", tv(rand_tensor(rng, vec![n, k], dt, table)))
        .with("other", tv(rand_tensor(rng, vec![k, m], dt, table)))
}

fn seed_lcm(rng: &mut dyn rand::RngCore, table: &DtypeTable) -> ApiInput {
    let nd = rng.gen_range(0..=3);
    let shape = rand_shape(rng, nd);
    let ints = table.codes_of_kind(DtypeKind::Int);
    let (d1, d2) = (*ints.choose(rng).unwrap(), *ints.choose(rng).unwrap());
    ApiInput::new("ref.lcm")
        .with("input", tv(rand_tensor(rng, shape.clone(), d1, table)))
        .with("other", tv(rand_tensor(rng, shape, d2, table)))
}
