//! Symbolic descriptor variables for an API signature.

use std::collections::BTreeMap;

use super::formula::{Atom, Formula, Lin, VarId};
use crate::dsl::TypeExpr;
use crate::value::{ApiSignature, DtypeKind, DtypeTable};

/// Real values (tensor ranges, float scalars) are stored as `value * SCALE`.
pub const SCALE: i64 = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub max_ndim: usize,
    pub dim_range: (i64, i64),
    pub int_range: (i64, i64),
    pub float_range: (f64, f64),
    pub max_tensor_bytes: u64,
    /// Maximum length of list and tuple parameters.
    pub max_seq_len: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_ndim: 5,
            dim_range: (0, 64),
            int_range: (-(1 << 31), (1 << 31) - 1),
            float_range: (-1e6, 1e6),
            max_tensor_bytes: 1 << 20,
            max_seq_len: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Ndim,
    Dim,
    Dtype,
    RangeLo,
    RangeHi,
    Int,
    Float,
    Bool,
    Enum,
    Len,
    Tag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarInfo {
    pub name: String,
    pub kind: VarKind,
    pub lo: i64,
    pub hi: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    Tensor {
        nd: VarId,
        dims: Vec<VarId>,
        dtype: VarId,
        lo: VarId,
        hi: VarId,
    },
    Int(VarId),
    Float(VarId),
    Bool(VarId),
    Dtype(VarId),
    Str { var: VarId, domain: Vec<String> },
    Seq {
        len: VarId,
        items: Vec<Slot>,
        tuple: bool,
    },
    Union { tag: VarId, arms: Vec<(TypeExpr, Slot)> },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("parameter '{param}' has unsupported type {ty}")]
    UnsupportedParamType { param: String, ty: String },
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub api: String,
    pub vars: Vec<VarInfo>,
    pub params: Vec<(String, Slot)>,
    pub bounds: Bounds,
    pub dtypes: DtypeTable,
    pub base: Formula,
}

impl Layout {
    pub fn slot(&self, param: &str) -> Option<&Slot> {
        self.params.iter().find(|(n, _)| n == param).map(|(_, s)| s)
    }

    pub fn domains(&self) -> Vec<(i64, i64)> {
        self.vars.iter().map(|v| (v.lo, v.hi)).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.iter().map(|v| v.name.clone()).collect()
    }

    pub fn var_by_name(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name)
    }
}

struct Builder {
    vars: Vec<VarInfo>,
    base: Vec<Formula>,
}

impl Builder {
    fn var(&mut self, name: String, kind: VarKind, lo: i64, hi: i64) -> VarId {
        self.vars.push(VarInfo { name, kind, lo, hi });
        self.vars.len() - 1
    }
}

fn scaled(x: f64) -> i64 {
    (x * SCALE as f64).round() as i64
}

pub fn build_layout(
    sig: &ApiSignature,
    bounds: &Bounds,
    dtypes: &DtypeTable,
    str_domains: &BTreeMap<String, Vec<String>>,
) -> Result<Layout, LayoutError> {
    let mut b = Builder {
        vars: Vec::new(),
        base: Vec::new(),
    };
    let mut params = Vec::new();
    for p in &sig.params {
        let slot = build_slot(&mut b, &p.name, &p.name, &p.ty, bounds, dtypes, str_domains, true)?;
        params.push((p.name.clone(), slot));
    }
    Ok(Layout {
        api: sig.api.clone(),
        vars: b.vars,
        params,
        bounds: bounds.clone(),
        dtypes: dtypes.clone(),
        base: Formula::and(b.base),
    })
}

#[allow(clippy::too_many_arguments)]
fn build_slot(
    b: &mut Builder,
    param: &str,
    prefix: &str,
    ty: &TypeExpr,
    bounds: &Bounds,
    dtypes: &DtypeTable,
    str_domains: &BTreeMap<String, Vec<String>>,
    top: bool,
) -> Result<Slot, LayoutError> {
    let unsupported = || LayoutError::UnsupportedParamType {
        param: param.to_string(),
        ty: ty.to_string(),
    };
    let (flo, fhi) = (scaled(bounds.float_range.0), scaled(bounds.float_range.1));
    Ok(match ty {
        TypeExpr::Int => Slot::Int(b.var(format!("{prefix}.value"), VarKind::Int, bounds.int_range.0, bounds.int_range.1)),
        TypeExpr::Float => Slot::Float(b.var(format!("{prefix}.value"), VarKind::Float, flo, fhi)),
        TypeExpr::Bool => Slot::Bool(b.var(format!("{prefix}.value"), VarKind::Bool, 0, 1)),
        TypeExpr::Dtype => Slot::Dtype(b.var(
            format!("{prefix}.value"),
            VarKind::Enum,
            0,
            dtypes.len() as i64 - 1,
        )),
        TypeExpr::Str => {
            let domain = str_domains.get(param).cloned().unwrap_or_default();
            if domain.is_empty() {
                return Err(unsupported());
            }
            let var = b.var(format!("{prefix}.value"), VarKind::Enum, 0, domain.len() as i64 - 1);
            Slot::Str { var, domain }
        }
        TypeExpr::Tensor => {
            if !top {
                return Err(unsupported());
            }
            let nd = b.var(format!("{prefix}.nd"), VarKind::Ndim, 0, bounds.max_ndim as i64);
            let dims: Vec<VarId> = (0..bounds.max_ndim)
                .map(|i| {
                    b.var(
                        format!("{prefix}.shape[{i}]"),
                        VarKind::Dim,
                        bounds.dim_range.0,
                        bounds.dim_range.1,
                    )
                })
                .collect();
            let dtype = b.var(format!("{prefix}.dtype"), VarKind::Dtype, 0, dtypes.len() as i64 - 1);
            let lo = b.var(format!("{prefix}.lo"), VarKind::RangeLo, flo, fhi);
            let hi = b.var(format!("{prefix}.hi"), VarKind::RangeHi, flo, fhi);
            for (i, d) in dims.iter().enumerate() {
                // inactive slots are pinned to 1
                b.base.push(Formula::or(vec![
                    Formula::var_ge(nd, i as i64 + 1),
                    Formula::var_eq(*d, 1),
                ]));
            }
            b.base.push(Formula::le(Lin::var(lo), Lin::var(hi)));
            for d in dtypes.entries() {
                let pin = match d.kind {
                    DtypeKind::Int => Formula::and(vec![
                        Formula::Atom(Atom::Multiple { var: lo, m: SCALE, negated: false }),
                        Formula::Atom(Atom::Multiple { var: hi, m: SCALE, negated: false }),
                    ]),
                    DtypeKind::Bool => Formula::and(vec![
                        Formula::Atom(Atom::Multiple { var: lo, m: SCALE, negated: false }),
                        Formula::Atom(Atom::Multiple { var: hi, m: SCALE, negated: false }),
                        Formula::var_ge(lo, 0),
                        Formula::var_le(hi, SCALE),
                    ]),
                    _ => continue,
                };
                b.base.push(Formula::or(vec![Formula::var_ne(dtype, d.code as i64), pin]));
            }
            b.base.push(Formula::Atom(Atom::Budget {
                dims: dims.clone(),
                dtype,
                widths: dtypes.entries().iter().map(|d| d.byte_width as u64).collect(),
                limit: bounds.max_tensor_bytes,
            }));
            Slot::Tensor {
                nd,
                dims,
                dtype,
                lo,
                hi,
            }
        }
        TypeExpr::List(elem) | TypeExpr::Tuple(elem) => {
            if !top || !elem.is_primitive() {
                return Err(unsupported());
            }
            let len = b.var(format!("{prefix}.len"), VarKind::Len, 0, bounds.max_seq_len as i64);
            let mut items = Vec::new();
            for i in 0..bounds.max_seq_len {
                let s = build_slot(b, param, &format!("{prefix}.item[{i}]"), elem, bounds, dtypes, str_domains, false)?;
                if let Some(v) = scalar_var(&s) {
                    b.base.push(Formula::or(vec![
                        Formula::var_ge(len, i as i64 + 1),
                        Formula::var_eq(v, 0),
                    ]));
                }
                items.push(s);
            }
            Slot::Seq {
                len,
                items,
                tuple: matches!(ty, TypeExpr::Tuple(_)),
            }
        }
        TypeExpr::Union(..) => {
            if !top {
                return Err(unsupported());
            }
            let arms_ty: Vec<TypeExpr> = ty.arms().into_iter().cloned().collect();
            let tag = b.var(format!("{prefix}.tag"), VarKind::Tag, 0, arms_ty.len() as i64 - 1);
            let mut arms = Vec::new();
            for (i, a) in arms_ty.iter().enumerate() {
                let s = build_slot(b, param, &format!("{prefix}.arm[{i}]"), a, bounds, dtypes, str_domains, false)?;
                if let Some(v) = scalar_var(&s) {
                    b.base.push(Formula::or(vec![
                        Formula::var_eq(tag, i as i64),
                        Formula::var_eq(v, 0),
                    ]));
                }
                arms.push((a.clone(), s));
            }
            Slot::Union { tag, arms }
        }
    })
}

pub fn scalar_var(s: &Slot) -> Option<VarId> {
    match s {
        Slot::Int(v) | Slot::Float(v) | Slot::Bool(v) | Slot::Dtype(v) => Some(*v),
        Slot::Str { var, .. } => Some(*var),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(params: &[(&str, TypeExpr, bool)]) -> Result<Layout, LayoutError> {
        build_layout(
            &ApiSignature::new("t", params),
            &Bounds::default(),
            &DtypeTable::default(),
            &BTreeMap::new(),
        )
    }

    #[test]
    fn tensor_block_counts() {
        let l = layout(&[("input", TypeExpr::Tensor, true)]).unwrap();
        let count = |k| l.vars.iter().filter(|v| v.kind == k).count();
        assert_eq!(count(VarKind::Ndim), 1);
        assert_eq!(count(VarKind::Dim), 5);
        assert_eq!(count(VarKind::Dtype), 1);
        assert_eq!(count(VarKind::RangeLo) + count(VarKind::RangeHi), 2);
        assert_eq!(l.vars[1].name, "input.shape[0]");
    }

    #[test]
    fn scalar_param_adds_one_var() {
        let l = layout(&[("input", TypeExpr::Tensor, true), ("dim", TypeExpr::Int, true)]).unwrap();
        assert_eq!(l.vars.len(), 10);
        assert_eq!(l.vars[9].name, "dim.value");
    }

    #[test]
    fn nested_lists_rejected() {
        let ty = TypeExpr::List(Box::new(TypeExpr::List(Box::new(TypeExpr::Int))));
        assert!(matches!(layout(&[("x", ty, true)]), Err(LayoutError::UnsupportedParamType { .. })));
    }
}
