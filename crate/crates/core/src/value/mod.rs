//! Runtime values bound to API parameters.

mod codec;

pub use codec::{
    decode_input, decode_value, decode_value_with, encode_input, encode_value, encode_value_with,
    DecodeError,
};

use std::fmt;

use crate::dsl::{TensorFn, TypeExpr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeKind {
    Float,
    Int,
    Bool,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DtypeInfo {
    pub code: u32,
    pub name: String,
    pub byte_width: u32,
    pub kind: DtypeKind,
}

/// Dense code table of the dtypes a library understands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DtypeTable {
    entries: Vec<DtypeInfo>,
}

impl Default for DtypeTable {
    fn default() -> Self {
        let e = |code, name: &str, byte_width, kind| DtypeInfo {
            code,
            name: name.to_string(),
            byte_width,
            kind,
        };
        DtypeTable {
            entries: vec![
                e(0, "float32", 4, DtypeKind::Float),
                e(1, "float64", 8, DtypeKind::Float),
                e(2, "int32", 4, DtypeKind::Int),
                e(3, "int64", 8, DtypeKind::Int),
                e(4, "bool", 1, DtypeKind::Bool),
                e(5, "complex64", 8, DtypeKind::Complex),
            ],
        }
    }
}

impl DtypeTable {
    /// Codes are assigned densely in the given order.
    pub fn new(entries: &[(&str, u32, DtypeKind)]) -> Result<DtypeTable, String> {
        let mut out = Vec::new();
        for (i, (name, width, kind)) in entries.iter().enumerate() {
            if *width == 0 {
                return Err(format!("dtype {name} has zero width"));
            }
            if out.iter().any(|d: &DtypeInfo| d.name == *name) {
                return Err(format!("duplicate dtype {name}"));
            }
            out.push(DtypeInfo {
                code: i as u32,
                name: name.to_string(),
                byte_width: *width,
                kind: *kind,
            });
        }
        Ok(DtypeTable { entries: out })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, code: u32) -> Option<&DtypeInfo> {
        self.entries.get(code as usize)
    }

    pub fn by_name(&self, name: &str) -> Option<&DtypeInfo> {
        self.entries.iter().find(|d| d.name == name)
    }

    pub fn entries(&self) -> &[DtypeInfo] {
        &self.entries
    }

    pub fn kind(&self, code: u32) -> Option<DtypeKind> {
        self.get(code).map(|d| d.kind)
    }

    pub fn codes_of_kind(&self, kind: DtypeKind) -> Vec<u32> {
        self.entries
            .iter()
            .filter(|d| d.kind == kind)
            .map(|d| d.code)
            .collect()
    }
}

/// Tensor summary: shape, dtype, value range and optionally the elements.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub shape: Vec<u64>,
    pub dtype: u32,
    pub lo: f64,
    pub hi: f64,
    pub elements: Option<Vec<f64>>,
}

impl Tensor {
    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> u64 {
        self.shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .unwrap_or(u64::MAX)
    }

    /// Summary-only tensor.
    pub fn summary(shape: Vec<u64>, dtype: u32, lo: f64, hi: f64) -> Tensor {
        Tensor {
            shape,
            dtype,
            lo,
            hi,
            elements: None,
        }
    }

    /// Materialized tensor whose range is the observed min/max (NaN ignored).
    pub fn from_elements(shape: Vec<u64>, dtype: u32, elements: Vec<f64>) -> Tensor {
        let (lo, hi) = finite_range(&elements).unwrap_or((0.0, 0.0));
        Tensor {
            shape,
            dtype,
            lo,
            hi,
            elements: Some(elements),
        }
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.lo <= self.hi) && !(self.lo.is_nan() || self.hi.is_nan()) {
            return Err(format!("lo {} exceeds hi {}", self.lo, self.hi));
        }
        if let Some(el) = &self.elements {
            if el.len() as u64 != self.numel() {
                return Err(format!(
                    "{} elements for shape {:?}",
                    el.len(),
                    self.shape
                ));
            }
            if let Some(x) = el
                .iter()
                .find(|x| !x.is_nan() && (**x < self.lo || **x > self.hi))
            {
                return Err(format!("element {x} outside [{}, {}]", self.lo, self.hi));
            }
        }
        Ok(())
    }
}

fn finite_range(xs: &[f64]) -> Option<(f64, f64)> {
    let mut it = xs.iter().copied().filter(|x| !x.is_nan());
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
}

fn same_f64(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

impl PartialEq for Tensor {
    fn eq(&self, o: &Self) -> bool {
        self.shape == o.shape
            && self.dtype == o.dtype
            && same_f64(self.lo, o.lo)
            && same_f64(self.hi, o.hi)
            && match (&self.elements, &o.elements) {
                (None, None) => true,
                (Some(a), Some(b)) => {
                    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| same_f64(*x, *y))
                }
                _ => false,
            }
    }
}

#[derive(Debug, Clone)]
pub enum ConcreteValue {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    Dtype(u32),
    Tensor(Tensor),
    List(Vec<ConcreteValue>),
    Tuple(Vec<ConcreteValue>),
    /// An omitted optional parameter.
    None,
}

impl PartialEq for ConcreteValue {
    fn eq(&self, o: &Self) -> bool {
        use ConcreteValue::*;
        match (self, o) {
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => same_f64(*a, *b),
            (Bool(a), Bool(b)) => a == b,
            (Str(a), Str(b)) => a == b,
            (Dtype(a), Dtype(b)) => a == b,
            (Tensor(a), Tensor(b)) => a == b,
            (List(a), List(b)) | (Tuple(a), Tuple(b)) => a == b,
            (None, None) => true,
            _ => false,
        }
    }
}

impl ConcreteValue {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ConcreteValue::Int(_) => "int",
            ConcreteValue::Float(_) => "float",
            ConcreteValue::Bool(_) => "bool",
            ConcreteValue::Str(_) => "str",
            ConcreteValue::Dtype(_) => "dtype",
            ConcreteValue::Tensor(_) => "tensor",
            ConcreteValue::List(_) => "list",
            ConcreteValue::Tuple(_) => "tuple",
            ConcreteValue::None => "none",
        }
    }

    pub fn as_tensor(&self) -> Option<&Tensor> {
        match self {
            ConcreteValue::Tensor(t) => Some(t),
            _ => None,
        }
    }

    /// Whether the value inhabits `ty`. `None` inhabits nothing.
    pub fn conforms(&self, ty: &TypeExpr) -> bool {
        match (self, ty) {
            (_, TypeExpr::Union(..)) => ty.arms().iter().any(|a| self.conforms(a)),
            (ConcreteValue::Int(_), TypeExpr::Int) => true,
            (ConcreteValue::Float(_), TypeExpr::Float) => true,
            (ConcreteValue::Bool(_), TypeExpr::Bool) => true,
            (ConcreteValue::Str(_), TypeExpr::Str) => true,
            (ConcreteValue::Dtype(_), TypeExpr::Dtype) => true,
            (ConcreteValue::Tensor(_), TypeExpr::Tensor) => true,
            (ConcreteValue::List(xs), TypeExpr::List(e))
            | (ConcreteValue::Tuple(xs), TypeExpr::Tuple(e)) => {
                xs.iter().all(|x| x.conforms(e))
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValueError {
    #[error("index {index} out of range for {ndim}-d tensor")]
    IndexOutOfRange { index: i64, ndim: usize },
    #[error("expected {expected}, found {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("unknown dtype code {0}")]
    UnknownDtype(u32),
    #[error("shape() requires an index")]
    MissingIndex,
}

/// Result of a tensor property query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prop {
    Int(i64),
    Float(f64),
}

/// Resolve a possibly negative dimension index against `ndim`.
pub fn resolve_dim(index: i64, ndim: usize) -> Result<usize, ValueError> {
    let nd = ndim as i64;
    let r = if index < 0 { index + nd } else { index };
    if r < 0 || r >= nd {
        Err(ValueError::IndexOutOfRange { index, ndim })
    } else {
        Ok(r as usize)
    }
}

pub fn tensor_prop(v: &ConcreteValue, f: TensorFn, index: Option<i64>) -> Result<Prop, ValueError> {
    let t = v.as_tensor().ok_or(ValueError::WrongKind {
        expected: "tensor",
        found: v.kind_name(),
    })?;
    Ok(match f {
        TensorFn::Ndim => Prop::Int(t.ndim() as i64),
        TensorFn::Shape => {
            let i = index.ok_or(ValueError::MissingIndex)?;
            Prop::Int(t.shape[resolve_dim(i, t.ndim())?] as i64)
        }
        TensorFn::Dtype => Prop::Int(t.dtype as i64),
        TensorFn::Min | TensorFn::Max => {
            let observed = t.elements.as_deref().and_then(finite_range);
            Prop::Float(match (f, observed) {
                (TensorFn::Min, Some((lo, _))) => lo,
                (TensorFn::Max, Some((_, hi))) => hi,
                (TensorFn::Min, None) => t.lo,
                _ => t.hi,
            })
        }
    })
}

pub fn byte_size(t: &Tensor, table: &DtypeTable) -> Result<u64, ValueError> {
    let w = table
        .get(t.dtype)
        .ok_or(ValueError::UnknownDtype(t.dtype))?
        .byte_width as u64;
    Ok(t.numel().saturating_mul(w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: TypeExpr,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiSignature {
    pub api: String,
    pub params: Vec<Param>,
}

impl ApiSignature {
    pub fn new(api: &str, params: &[(&str, TypeExpr, bool)]) -> ApiSignature {
        ApiSignature {
            api: api.to_string(),
            params: params
                .iter()
                .map(|(n, t, r)| Param {
                    name: n.to_string(),
                    ty: t.clone(),
                    required: *r,
                })
                .collect(),
        }
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.params.is_empty() {
            return Err(format!("{}: no parameters", self.api));
        }
        for (i, p) in self.params.iter().enumerate() {
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return Err(format!("{}: duplicate parameter {}", self.api, p.name));
            }
        }
        Ok(())
    }

    /// Names known, required ones present, present ones well-typed.
    pub fn validate(&self, input: &ApiInput) -> Result<(), String> {
        for (name, v) in &input.args {
            let p = self
                .param(name)
                .ok_or_else(|| format!("unknown parameter '{name}'"))?;
            if *v != ConcreteValue::None && !v.conforms(&p.ty) {
                return Err(format!("parameter '{name}' is {}, expected {}", v.kind_name(), p.ty));
            }
        }
        for p in &self.params {
            let present = matches!(input.get(&p.name), Some(v) if *v != ConcreteValue::None);
            if p.required && !present {
                return Err(format!("missing required parameter '{}'", p.name));
            }
        }
        Ok(())
    }
}

/// Arguments for one API call, in signature order.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiInput {
    pub api: String,
    pub args: Vec<(String, ConcreteValue)>,
}

impl ApiInput {
    pub fn new(api: &str) -> ApiInput {
        ApiInput {
            api: api.to_string(),
            args: Vec::new(),
        }
    }

    pub fn with(mut self, name: &str, v: ConcreteValue) -> ApiInput {
        self.set(name, v);
        self
    }

    pub fn get(&self, name: &str) -> Option<&ConcreteValue> {
        self.args.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ConcreteValue> {
        self.args.iter_mut().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn set(&mut self, name: &str, v: ConcreteValue) {
        match self.get_mut(name) {
            Some(slot) => *slot = v,
            None => self.args.push((name.to_string(), v)),
        }
    }

    pub fn remove(&mut self, name: &str) {
        self.args.retain(|(n, _)| n != name);
    }
}

impl fmt::Display for ApiInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", encode_input(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[u64]) -> ConcreteValue {
        ConcreteValue::Tensor(Tensor::summary(shape.to_vec(), 0, 0.0, 1.0))
    }

    #[test]
    fn props() {
        assert_eq!(tensor_prop(&t(&[5, 3, 4, 1]), TensorFn::Ndim, None), Ok(Prop::Int(4)));
        assert_eq!(tensor_prop(&t(&[3, 1, 1]), TensorFn::Shape, Some(-1)), Ok(Prop::Int(1)));
        assert_eq!(tensor_prop(&t(&[]), TensorFn::Ndim, None), Ok(Prop::Int(0)));
        assert!(matches!(
            tensor_prop(&t(&[3]), TensorFn::Shape, Some(-2)),
            Err(ValueError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            tensor_prop(&ConcreteValue::Int(1), TensorFn::Ndim, None),
            Err(ValueError::WrongKind { .. })
        ));
    }

    #[test]
    fn min_max_prefer_elements() {
        let v = ConcreteValue::Tensor(Tensor {
            shape: vec![2],
            dtype: 0,
            lo: -1.0,
            hi: 1.0,
            elements: Some(vec![0.25, 0.5]),
        });
        assert_eq!(tensor_prop(&v, TensorFn::Min, None), Ok(Prop::Float(0.25)));
        assert_eq!(tensor_prop(&t(&[2]), TensorFn::Max, None), Ok(Prop::Float(1.0)));
    }

    #[test]
    fn bytes() {
        let table = DtypeTable::default();
        let mk = |s: &[u64], d| Tensor::summary(s.to_vec(), d, 0.0, 0.0);
        assert_eq!(byte_size(&mk(&[5, 3, 4, 1], 0), &table), Ok(240));
        assert_eq!(byte_size(&mk(&[0], 3), &table), Ok(0));
        assert_eq!(byte_size(&mk(&[], 1), &table), Ok(8));
        assert_eq!(byte_size(&mk(&[], 9), &table), Err(ValueError::UnknownDtype(9)));
    }

    #[test]
    fn signature_validation() {
        let sig = ApiSignature::new(
            "x",
            &[("input", TypeExpr::Tensor, true), ("alpha", TypeExpr::Float, false)],
        );
        let ok = ApiInput::new("x").with("input", t(&[1]));
        assert!(sig.validate(&ok).is_ok());
        assert!(sig.validate(&ApiInput::new("x")).is_err());
        let bad = ok.clone().with("alpha", ConcreteValue::Int(1));
        assert!(sig.validate(&bad).is_err());
    }
}
