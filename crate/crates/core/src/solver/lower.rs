//! Translation of typed rules over parameter tuples into formulas.
//!
//! Every value expression lowers to a list of guarded alternatives. A guard
//! holds exactly when the evaluator would take that branch without error, so
//! an access that would fail makes all of its alternatives vanish and the
//! enclosing comparison false under either polarity.

use std::collections::{BTreeMap, HashMap};

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedMul, One, ToPrimitive, Zero};

use super::formula::{Formula, Lin, Rel, VarId};
use super::layout::{Layout, Slot, SCALE};
use crate::dsl::ast::*;
use crate::dsl::TypedRule;

type Q = Ratio<i128>;

/// Largest number of values a quantifier may range over after expansion.
pub const MAX_EXPANSION: i64 = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LowerError {
    #[error("nonlinear term: {0}")]
    NonlinearTerm(String),
    #[error("unsupported string operation: {0}")]
    StringOpUnsupported(String),
    #[error("index or bound not statically bounded: {0}")]
    IndexUnbounded(String),
    #[error("coefficient overflow")]
    Overflow,
    #[error("parameter tuple does not match the rule: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lowered {
    pub formula: Formula,
    /// Uses min/max, whose lowering to the range summary must be rechecked
    /// on concrete values.
    pub approximate: bool,
}

/// Linear form over rationals.
#[derive(Debug, Clone, PartialEq)]
struct RLin {
    terms: BTreeMap<VarId, Q>,
    k: Q,
}

impl RLin {
    fn constant(q: Q) -> RLin {
        RLin {
            terms: BTreeMap::new(),
            k: q,
        }
    }

    fn int(v: i64) -> RLin {
        RLin::constant(Q::from_integer(v as i128))
    }

    fn var(v: VarId, coef: Q) -> RLin {
        let mut terms = BTreeMap::new();
        terms.insert(v, coef);
        RLin {
            terms,
            k: Q::zero(),
        }
    }

    fn as_const(&self) -> Option<Q> {
        if self.terms.values().all(|c| c.is_zero()) {
            Some(self.k)
        } else {
            None
        }
    }

    fn add(&self, o: &RLin, sign: i128) -> Result<RLin, LowerError> {
        let s = Q::from_integer(sign);
        let mut out = self.clone();
        for (v, c) in &o.terms {
            let add = c.checked_mul(&s).ok_or(LowerError::Overflow)?;
            let e = out.terms.entry(*v).or_insert_with(Q::zero);
            *e = e.checked_add(&add).ok_or(LowerError::Overflow)?;
        }
        out.terms.retain(|_, c| !c.is_zero());
        out.k = out
            .k
            .checked_add(&o.k.checked_mul(&s).ok_or(LowerError::Overflow)?)
            .ok_or(LowerError::Overflow)?;
        Ok(out)
    }

    fn scale(&self, q: Q) -> Result<RLin, LowerError> {
        let mut out = RLin::constant(self.k.checked_mul(&q).ok_or(LowerError::Overflow)?);
        for (v, c) in &self.terms {
            let c = c.checked_mul(&q).ok_or(LowerError::Overflow)?;
            if !c.is_zero() {
                out.terms.insert(*v, c);
            }
        }
        Ok(out)
    }

    fn is_integral(&self) -> bool {
        self.k.is_integer() && self.terms.values().all(|c| c.is_integer())
    }

    /// Integer form `D·self` with `D > 0` clearing all denominators.
    fn to_lin(&self) -> Result<Lin, LowerError> {
        let mut d: i128 = self.k.denom().to_owned();
        for c in self.terms.values() {
            d = d.lcm(c.denom());
        }
        let conv = |q: &Q| -> Result<i64, LowerError> {
            (q * Q::from_integer(d))
                .to_integer()
                .to_i64()
                .ok_or(LowerError::Overflow)
        };
        let mut terms = Vec::with_capacity(self.terms.len());
        for (v, c) in &self.terms {
            terms.push((conv(c)?, *v));
        }
        Ok(Lin::new(terms, conv(&self.k)?))
    }

    fn range(&self, doms: &[(i64, i64)]) -> (Q, Q) {
        let mut lo = self.k;
        let mut hi = self.k;
        for (v, c) in &self.terms {
            let (a, b) = doms[*v];
            let x = c * Q::from_integer(a as i128);
            let y = c * Q::from_integer(b as i128);
            lo += if x < y { x } else { y };
            hi += if x < y { y } else { x };
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone)]
enum V<'a> {
    Num(RLin),
    StrLit(String),
    StrVar(VarId, &'a [String]),
}

#[derive(Debug, Clone)]
struct Alt<'a> {
    guard: Formula,
    val: V<'a>,
}

fn one(val: V<'_>) -> Vec<Alt<'_>> {
    vec![Alt {
        guard: Formula::TRUE,
        val,
    }]
}

/// Atom `a op b`.
fn compare(op: CmpOp, a: &RLin, b: &RLin) -> Result<Formula, LowerError> {
    let lin = a.add(b, -1)?.to_lin()?;
    let neg = || Lin::new(lin.terms.iter().map(|(c, v)| (-c, *v)).collect(), -lin.k);
    Ok(match op {
        CmpOp::Eq => Formula::cmp(lin, Rel::Eq),
        CmpOp::Ne => Formula::cmp(lin, Rel::Ne),
        CmpOp::Le => Formula::cmp(lin, Rel::Le),
        CmpOp::Lt => {
            let k = lin.k + 1;
            Formula::cmp(Lin::new(lin.terms, k), Rel::Le)
        }
        CmpOp::Ge => Formula::cmp(neg(), Rel::Le),
        CmpOp::Gt => {
            let n = neg();
            let k = n.k + 1;
            Formula::cmp(Lin::new(n.terms, k), Rel::Le)
        }
    })
}

pub fn lower_rule(rule: &TypedRule, params: &[String], layout: &Layout) -> Result<Lowered, LowerError> {
    lower_body(&rule.rule, params, layout)
}

pub fn lower_body(rule: &Rule, params: &[String], layout: &Layout) -> Result<Lowered, LowerError> {
    if params.len() != rule.bindings.len() {
        return Err(LowerError::BadParams(format!(
            "{} parameters for {} bindings",
            params.len(),
            rule.bindings.len()
        )));
    }
    let mut env = HashMap::new();
    for (b, p) in rule.bindings.iter().zip(params) {
        let slot = layout
            .slot(p)
            .ok_or_else(|| LowerError::BadParams(format!("unknown parameter '{p}'")))?;
        env.insert(b.name.clone(), slot);
    }
    let mut lw = Lowerer {
        env,
        doms: layout.domains(),
        approximate: false,
    };
    let formula = lw.boolean(&rule.body, true)?;
    Ok(Lowered {
        formula,
        approximate: lw.approximate,
    })
}

struct Lowerer<'a> {
    env: HashMap<String, &'a Slot>,
    doms: Vec<(i64, i64)>,
    approximate: bool,
}

fn subst(e: &Expr, name: &str, value: i64) -> Expr {
    let s = |x: &Expr| subst(x, name, value);
    let kind = match &*e.kind {
        ExprKind::Var(n) if n == name => ExprKind::Literal(Literal::Int(value)),
        ExprKind::Literal(_) | ExprKind::Var(_) | ExprKind::TupleLen { .. } => (*e.kind).clone(),
        ExprKind::TensorFn {
            func,
            target,
            index,
        } => ExprKind::TensorFn {
            func: *func,
            target: target.clone(),
            index: index.as_ref().map(s),
        },
        ExprKind::TupleIndex { target, index } => ExprKind::TupleIndex {
            target: target.clone(),
            index: s(index),
        },
        ExprKind::Arith { op, lhs, rhs } => ExprKind::Arith {
            op: *op,
            lhs: s(lhs),
            rhs: s(rhs),
        },
        ExprKind::Cmp { op, lhs, rhs } => ExprKind::Cmp {
            op: *op,
            lhs: s(lhs),
            rhs: s(rhs),
        },
        ExprKind::And(l, r) => ExprKind::And(s(l), s(r)),
        ExprKind::Or(l, r) => ExprKind::Or(s(l), s(r)),
        ExprKind::Quant {
            kind,
            bound,
            lo,
            hi,
            body,
        } => ExprKind::Quant {
            kind: *kind,
            bound: bound.clone(),
            lo: s(lo),
            hi: s(hi),
            body: s(body),
        },
        ExprKind::If {
            cond,
            then,
            otherwise,
        } => ExprKind::If {
            cond: s(cond),
            then: s(then),
            otherwise: otherwise.as_ref().map(s),
        },
    };
    Expr::new(kind, e.span)
}

fn scalar_value(slot: &Slot) -> Option<V<'_>> {
    let q = Q::new(1, SCALE as i128);
    Some(match slot {
        Slot::Int(v) | Slot::Bool(v) | Slot::Dtype(v) => V::Num(RLin::var(*v, Q::one())),
        Slot::Float(v) => V::Num(RLin::var(*v, q)),
        Slot::Str { var, domain } => V::StrVar(*var, domain),
        _ => return None,
    })
}

impl<'a> Lowerer<'a> {
    fn slot(&self, name: &str) -> Result<&'a Slot, LowerError> {
        self.env
            .get(name)
            .copied()
            .ok_or_else(|| LowerError::BadParams(format!("unbound '{name}'")))
    }

    fn tensor(&self, name: &str) -> Result<(VarId, &'a [VarId], VarId, VarId, VarId), LowerError> {
        match self.slot(name)? {
            Slot::Tensor {
                nd,
                dims,
                dtype,
                lo,
                hi,
            } => Ok((*nd, dims, *dtype, *lo, *hi)),
            _ => Err(LowerError::BadParams(format!("'{name}' is not a tensor parameter"))),
        }
    }

    fn num(&mut self, e: &Expr) -> Result<Vec<(Formula, RLin)>, LowerError> {
        Ok(self
            .value(e)?
            .into_iter()
            .filter_map(|a| match a.val {
                V::Num(l) => Some((a.guard, l)),
                _ => None,
            })
            .collect())
    }

    /// Guarded resolution of a possibly negative index into `0..slots`.
    fn index_alts(
        &mut self,
        index: &Expr,
        len: VarId,
        slots: usize,
    ) -> Result<Vec<(Formula, usize)>, LowerError> {
        let mut out = Vec::new();
        for (g, l) in self.num(index)? {
            if let Some(c) = l.as_const() {
                if !c.is_integer() {
                    continue;
                }
                let c = c.to_integer();
                if c >= 0 {
                    if (c as usize) < slots {
                        out.push((Formula::and(vec![g, Formula::var_ge(len, c as i64 + 1)]), c as usize));
                    }
                } else {
                    for r in 0..slots {
                        let n = r as i128 - c;
                        if n <= slots as i128 {
                            out.push((Formula::and(vec![g.clone(), Formula::var_eq(len, n as i64)]), r));
                        }
                    }
                }
                continue;
            }
            let len_l = RLin::var(len, Q::one());
            for r in 0..slots {
                let rr = RLin::int(r as i64);
                let pos = Formula::and(vec![
                    compare(CmpOp::Eq, &l, &rr)?,
                    Formula::var_ge(len, r as i64 + 1),
                ]);
                let neg = Formula::and(vec![
                    compare(CmpOp::Eq, &l.add(&len_l, 1)?, &rr)?,
                    compare(CmpOp::Le, &l, &RLin::int(-1))?,
                ]);
                out.push((Formula::and(vec![g.clone(), Formula::or(vec![pos, neg])]), r));
            }
        }
        Ok(out)
    }

    fn value(&mut self, e: &Expr) -> Result<Vec<Alt<'a>>, LowerError> {
        match &*e.kind {
            ExprKind::Literal(l) => Ok(one(match l {
                Literal::Int(i) => V::Num(RLin::int(*i)),
                Literal::Real(r) => {
                    let n = r.numer().to_i128().ok_or(LowerError::Overflow)?;
                    let d = r.denom().to_i128().ok_or(LowerError::Overflow)?;
                    V::Num(RLin::constant(Q::new(n, d)))
                }
                Literal::Bool(b) => V::Num(RLin::int(*b as i64)),
                Literal::Str(s) => V::StrLit(s.clone()),
            })),
            ExprKind::Var(name) => match self.slot(name)? {
                Slot::Union { tag, arms } => Ok(arms
                    .iter()
                    .enumerate()
                    .filter_map(|(i, (_, s))| {
                        scalar_value(s).map(|val| Alt {
                            guard: Formula::var_eq(*tag, i as i64),
                            val,
                        })
                    })
                    .collect()),
                s => scalar_value(s)
                    .map(one)
                    .ok_or_else(|| LowerError::BadParams(format!("'{name}' is not a scalar"))),
            },
            ExprKind::TensorFn {
                func,
                target,
                index,
            } => {
                let (nd, dims, dtype, lo, hi) = self.tensor(target)?;
                let q = Q::new(1, SCALE as i128);
                match func {
                    TensorFn::Ndim => Ok(one(V::Num(RLin::var(nd, Q::one())))),
                    TensorFn::Dtype => Ok(one(V::Num(RLin::var(dtype, Q::one())))),
                    TensorFn::Min => {
                        self.approximate = true;
                        Ok(one(V::Num(RLin::var(lo, q))))
                    }
                    TensorFn::Max => {
                        self.approximate = true;
                        Ok(one(V::Num(RLin::var(hi, q))))
                    }
                    TensorFn::Shape => {
                        let index = index
                            .as_ref()
                            .ok_or_else(|| LowerError::BadParams("shape without index".into()))?;
                        Ok(self
                            .index_alts(index, nd, dims.len())?
                            .into_iter()
                            .map(|(g, r)| Alt {
                                guard: g,
                                val: V::Num(RLin::var(dims[r], Q::one())),
                            })
                            .collect())
                    }
                }
            }
            ExprKind::TupleIndex { target, index } => match self.slot(target)? {
                Slot::Seq { len, items, .. } => {
                    let alts = self.index_alts(index, *len, items.len())?;
                    let mut out = Vec::new();
                    for (g, r) in alts {
                        let val = scalar_value(&items[r])
                            .ok_or_else(|| LowerError::BadParams("non-scalar element".into()))?;
                        out.push(Alt { guard: g, val });
                    }
                    Ok(out)
                }
                _ => Err(LowerError::BadParams(format!("'{target}' is not a sequence"))),
            },
            ExprKind::TupleLen { target } => match self.slot(target)? {
                Slot::Seq { len, .. } => Ok(one(V::Num(RLin::var(*len, Q::one())))),
                _ => Err(LowerError::BadParams(format!("'{target}' is not a sequence"))),
            },
            ExprKind::Arith { op, lhs, rhs } => {
                let a = self.num(lhs)?;
                let b = self.num(rhs)?;
                let mut out = Vec::new();
                for (ga, la) in &a {
                    for (gb, lb) in &b {
                        let v = match op {
                            ArithOp::Add => la.add(lb, 1)?,
                            ArithOp::Sub => la.add(lb, -1)?,
                            ArithOp::Mul => match (la.as_const(), lb.as_const()) {
                                (Some(c), _) => lb.scale(c)?,
                                (_, Some(c)) => la.scale(c)?,
                                _ => {
                                    return Err(LowerError::NonlinearTerm(format!(
                                        "product of two variables in {}",
                                        crate::dsl::render_expr(e)
                                    )))
                                }
                            },
                            ArithOp::Div => match lb.as_const() {
                                Some(c) if c.is_zero() => continue,
                                Some(c) => la.scale(c.recip())?,
                                None => {
                                    return Err(LowerError::NonlinearTerm(format!(
                                        "variable divisor in {}",
                                        crate::dsl::render_expr(e)
                                    )))
                                }
                            },
                        };
                        out.push(Alt {
                            guard: Formula::and(vec![ga.clone(), gb.clone()]),
                            val: V::Num(v),
                        });
                    }
                }
                Ok(out)
            }
            ExprKind::If {
                cond,
                then,
                otherwise: Some(other),
            } => {
                let cp = self.boolean(cond, true)?;
                let cn = self.boolean(cond, false)?;
                let mut out = Vec::new();
                for a in self.value(then)? {
                    out.push(Alt {
                        guard: Formula::and(vec![cp.clone(), a.guard]),
                        val: a.val,
                    });
                }
                for a in self.value(other)? {
                    out.push(Alt {
                        guard: Formula::and(vec![cn.clone(), a.guard]),
                        val: a.val,
                    });
                }
                Ok(out)
            }
            _ => {
                // boolean-valued expression used as a value
                let t = self.boolean(e, true)?;
                let f = self.boolean(e, false)?;
                Ok(vec![
                    Alt {
                        guard: t,
                        val: V::Num(RLin::int(1)),
                    },
                    Alt {
                        guard: f,
                        val: V::Num(RLin::int(0)),
                    },
                ])
            }
        }
    }

    fn defined(&mut self, e: &Expr) -> Result<Formula, LowerError> {
        Ok(Formula::or(self.num(e)?.into_iter().map(|(g, _)| g).collect()))
    }

    fn static_bounds(&mut self, e: &Expr) -> Result<(i64, i64), LowerError> {
        let alts = self.num(e)?;
        let mut lo: Option<Q> = None;
        let mut hi: Option<Q> = None;
        for (_, l) in &alts {
            if !l.is_integral() {
                return Err(LowerError::NonlinearTerm(format!(
                    "fractional quantifier bound {}",
                    crate::dsl::render_expr(e)
                )));
            }
            let (a, b) = l.range(&self.doms);
            lo = Some(lo.map_or(a, |x| if a < x { a } else { x }));
            hi = Some(hi.map_or(b, |x| if b > x { b } else { x }));
        }
        match (lo, hi) {
            (Some(a), Some(b)) => Ok((
                a.floor().to_integer().clamp(i64::MIN as i128, i64::MAX as i128) as i64,
                b.ceil().to_integer().clamp(i64::MIN as i128, i64::MAX as i128) as i64,
            )),
            _ => Ok((0, -1)),
        }
    }

    fn compare_alts(&mut self, op: CmpOp, lhs: &Expr, rhs: &Expr) -> Result<Formula, LowerError> {
        let a = self.value(lhs)?;
        let b = self.value(rhs)?;
        let mut out = Vec::new();
        for x in &a {
            for y in &b {
                let atom = match (&x.val, &y.val) {
                    (V::Num(l), V::Num(r)) => compare(op, l, r)?,
                    (V::StrLit(s), V::StrVar(v, dom)) | (V::StrVar(v, dom), V::StrLit(s)) => {
                        match dom.iter().position(|d| d == s) {
                            Some(i) => compare(op, &RLin::var(*v, Q::one()), &RLin::int(i as i64))?,
                            None => Formula::Const(op == CmpOp::Ne),
                        }
                    }
                    (V::StrLit(s), V::StrLit(t)) => Formula::Const((s == t) == (op == CmpOp::Eq)),
                    (V::StrVar(v, d1), V::StrVar(w, d2)) => {
                        if d1 != d2 {
                            return Err(LowerError::StringOpUnsupported(
                                "comparison of strings over different domains".into(),
                            ));
                        }
                        compare(op, &RLin::var(*v, Q::one()), &RLin::var(*w, Q::one()))?
                    }
                    _ => {
                        if op.is_ordering() {
                            return Err(LowerError::StringOpUnsupported("ordering on strings".into()));
                        }
                        Formula::Const(op == CmpOp::Ne)
                    }
                };
                out.push(Formula::and(vec![x.guard.clone(), y.guard.clone(), atom]));
            }
        }
        let mut f = Formula::or(out);
        if op == CmpOp::Eq {
            // equality on min/max pins the tensor to a constant
            for side in [lhs, rhs] {
                if let ExprKind::TensorFn {
                    func: TensorFn::Min | TensorFn::Max,
                    target,
                    ..
                } = &*side.kind
                {
                    let (_, _, _, lo, hi) = self.tensor(target)?;
                    f = Formula::and(vec![f, Formula::eq(Lin::var(lo), Lin::var(hi))]);
                }
            }
        }
        Ok(f)
    }

    fn boolean(&mut self, e: &Expr, pos: bool) -> Result<Formula, LowerError> {
        match &*e.kind {
            ExprKind::Literal(Literal::Bool(b)) => Ok(Formula::Const(*b == pos)),
            ExprKind::Cmp { op, lhs, rhs } => {
                let op = if pos { *op } else { op.negate() };
                self.compare_alts(op, lhs, rhs)
            }
            ExprKind::And(l, r) => {
                let (a, b) = (self.boolean(l, pos)?, self.boolean(r, pos)?);
                Ok(if pos {
                    Formula::and(vec![a, b])
                } else {
                    Formula::or(vec![a, b])
                })
            }
            ExprKind::Or(l, r) => {
                let (a, b) = (self.boolean(l, pos)?, self.boolean(r, pos)?);
                Ok(if pos {
                    Formula::or(vec![a, b])
                } else {
                    Formula::and(vec![a, b])
                })
            }
            ExprKind::If {
                cond,
                then,
                otherwise,
            } => {
                let cp = self.boolean(cond, true)?;
                let cn = self.boolean(cond, false)?;
                let t = self.boolean(then, pos)?;
                match otherwise {
                    None => Ok(if pos {
                        Formula::or(vec![cn, t])
                    } else {
                        Formula::and(vec![cp, t])
                    }),
                    Some(o) => {
                        let o = self.boolean(o, pos)?;
                        Ok(Formula::or(vec![
                            Formula::and(vec![cp, t]),
                            Formula::and(vec![cn, o]),
                        ]))
                    }
                }
            }
            ExprKind::Quant {
                kind,
                bound,
                lo,
                hi,
                body,
            } => {
                let (slo, _) = self.static_bounds(lo)?;
                let (_, shi) = self.static_bounds(hi)?;
                if shi >= slo && shi - slo >= MAX_EXPANSION {
                    return Err(LowerError::IndexUnbounded(format!(
                        "quantifier over [{slo}, {shi}]"
                    )));
                }
                // Universal in this polarity: every in-range instance must hold.
                let universal = (*kind == Quantifier::ForAll) == pos;
                let mut parts = Vec::new();
                if universal {
                    parts.push(self.defined(lo)?);
                    parts.push(self.defined(hi)?);
                }
                let mut alts = Vec::new();
                for i in slo..=shi.max(slo - 1) {
                    let lit = Expr::int(i);
                    let in_range = Expr::and(
                        Expr::cmp(CmpOp::Le, lo.clone(), lit.clone()),
                        Expr::cmp(CmpOp::Le, lit, hi.clone()),
                    );
                    let inst = subst(body, bound, i);
                    if universal {
                        let out_of_range = self.boolean(&in_range, false)?;
                        let b = self.boolean(&inst, pos)?;
                        parts.push(Formula::or(vec![out_of_range, b]));
                    } else {
                        let inr = self.boolean(&in_range, true)?;
                        let b = self.boolean(&inst, pos)?;
                        alts.push(Formula::and(vec![inr, b]));
                    }
                }
                Ok(if universal {
                    Formula::and(parts)
                } else {
                    Formula::or(alts)
                })
            }
            _ => {
                let op = if pos { CmpOp::Eq } else { CmpOp::Ne };
                self.compare_alts(op, e, &Expr::synth(ExprKind::Literal(Literal::Bool(true))))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::compile_rule;
    use crate::solver::layout::{build_layout, Bounds};
    use crate::value::{ApiSignature, DtypeTable};

    fn layout(params: &[(&str, TypeExpr, bool)]) -> Layout {
        build_layout(
            &ApiSignature::new("t", params),
            &Bounds::default(),
            &DtypeTable::default(),
            &BTreeMap::new(),
        )
        .unwrap()
    }

    #[test]
    fn dim_validity_is_two_linear_atoms() {
        let l = layout(&[("input", TypeExpr::Tensor, true), ("dim", TypeExpr::Int, true)]);
        let r = compile_rule("{v_1: tensor, v_2: int} |= (-1 * ndim(v_1) <= v_2) and (v_2 <= ndim(v_1) - 1)").unwrap();
        let lw = lower_rule(&r, &["input".into(), "dim".into()], &l).unwrap();
        match &lw.formula {
            Formula::And(xs) => assert_eq!(xs.len(), 2),
            other => panic!("{other:?}"),
        }
        assert!(!lw.approximate);
    }

    #[test]
    fn product_of_variables_rejected() {
        let l = layout(&[("a", TypeExpr::Tensor, true), ("b", TypeExpr::Tensor, true)]);
        let r = compile_rule("{v_1: tensor, v_2: tensor} |= shape(v_1, 0) * shape(v_2, 0) = 4").unwrap();
        assert!(matches!(
            lower_rule(&r, &["a".into(), "b".into()], &l),
            Err(LowerError::NonlinearTerm(_))
        ));
    }
}
