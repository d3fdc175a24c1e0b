//! Reference semantics of rules over concrete values.
//!
//! Arithmetic is exact over rationals. `and`/`or` and the quantifiers are
//! decided whenever one operand decides them, even if another operand errors;
//! everything else propagates the first error.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};

use crate::dsl::ast::*;
use crate::dsl::TypedRule;
use crate::value::{resolve_dim, tensor_prop, ApiInput, ConcreteValue, Prop, ValueError};

pub const MAX_QUANT_SPAN: i64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("index value {0} is not an integer")]
    NonIntegralIndex(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: i64, len: usize },
    #[error("wrong kind: {0}")]
    WrongKind(String),
    #[error("quantifier range of {0} values exceeds the cap")]
    RangeTooLarge(i64),
}

impl From<ValueError> for EvalError {
    fn from(e: ValueError) -> Self {
        match e {
            ValueError::IndexOutOfRange { index, ndim } => EvalError::IndexOutOfRange { index, len: ndim },
            other => EvalError::WrongKind(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Val {
    Num(BigRational),
    Bool(bool),
    Str(String),
}

impl Val {
    pub fn int(v: i64) -> Val {
        Val::Num(BigRational::from_integer(BigInt::from(v)))
    }
}

/// Variable name to value, in binding order.
#[derive(Debug, Clone, Default)]
pub struct Assignment<'a> {
    slots: Vec<(&'a str, &'a ConcreteValue)>,
}

static NONE: ConcreteValue = ConcreteValue::None;

impl<'a> Assignment<'a> {
    pub fn new() -> Self {
        Assignment { slots: Vec::new() }
    }

    pub fn bind(mut self, name: &'a str, v: &'a ConcreteValue) -> Self {
        self.slots.push((name, v));
        self
    }

    /// Bind the rule's variables to the named parameters of `input`; absent
    /// parameters bind to `None`.
    pub fn for_input(rule: &'a Rule, params: &[String], input: &'a ApiInput) -> Self {
        let mut a = Assignment::new();
        for (b, p) in rule.bindings.iter().zip(params) {
            let v = input
                .args
                .iter()
                .find(|(n, _)| n == p)
                .map(|(_, v)| v)
                .unwrap_or(&NONE);
            a.slots.push((b.name.as_str(), v));
        }
        a
    }

    fn get(&self, name: &str) -> Option<&'a ConcreteValue> {
        self.slots.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Fails,
    Errors(EvalError),
}

pub fn check_rule(r: &TypedRule, b: &Assignment) -> Verdict {
    check_body(&r.rule.body, b)
}

pub fn check_body(body: &Expr, b: &Assignment) -> Verdict {
    match eval_expr(body, b) {
        Ok(Val::Bool(true)) => Verdict::Holds,
        Ok(Val::Bool(false)) => Verdict::Fails,
        Ok(_) => Verdict::Errors(EvalError::WrongKind("rule body is not boolean".into())),
        Err(e) => Verdict::Errors(e),
    }
}

/// Verdict of `rule` with its variables bound to `params` of `input`.
pub fn check_on_input(rule: &Rule, params: &[String], input: &ApiInput) -> Verdict {
    check_body(&rule.body, &Assignment::for_input(rule, params, input))
}

pub fn eval_expr(e: &Expr, b: &Assignment) -> Result<Val, EvalError> {
    let mut cx = Ctx {
        vars: b,
        quant: Vec::new(),
    };
    cx.eval(e)
}

struct Ctx<'a, 'b> {
    vars: &'b Assignment<'a>,
    quant: Vec<(&'b str, i64)>,
}

fn to_rational(x: f64) -> Result<BigRational, EvalError> {
    BigRational::from_f64(x).ok_or_else(|| EvalError::WrongKind(format!("non-finite value {x}")))
}

fn as_index(v: &BigRational) -> Result<i64, EvalError> {
    if !v.is_integer() {
        return Err(EvalError::NonIntegralIndex(v.to_string()));
    }
    v.to_integer()
        .to_i64()
        .ok_or_else(|| EvalError::NonIntegralIndex(v.to_string()))
}

impl<'a, 'b> Ctx<'a, 'b> {
    fn value(&self, name: &str) -> Result<&'a ConcreteValue, EvalError> {
        self.vars
            .get(name)
            .ok_or_else(|| EvalError::WrongKind(format!("unbound variable '{name}'")))
    }

    fn num(&mut self, e: &'b Expr) -> Result<BigRational, EvalError> {
        match self.eval(e)? {
            Val::Num(n) => Ok(n),
            other => Err(EvalError::WrongKind(format!("expected a number, found {other:?}"))),
        }
    }

    fn boolean(&mut self, e: &'b Expr) -> Result<bool, EvalError> {
        match self.eval(e)? {
            Val::Bool(b) => Ok(b),
            other => Err(EvalError::WrongKind(format!("expected a bool, found {other:?}"))),
        }
    }

    fn index(&mut self, e: &'b Expr) -> Result<i64, EvalError> {
        let n = self.num(e)?;
        as_index(&n)
    }

    fn eval(&mut self, e: &'b Expr) -> Result<Val, EvalError> {
        match &*e.kind {
            ExprKind::Literal(l) => Ok(match l {
                Literal::Int(i) => Val::int(*i),
                Literal::Real(r) => Val::Num(r.clone()),
                Literal::Bool(b) => Val::Bool(*b),
                Literal::Str(s) => Val::Str(s.clone()),
            }),
            ExprKind::Var(name) => {
                if let Some((_, v)) = self.quant.iter().rev().find(|(n, _)| n == name) {
                    return Ok(Val::int(*v));
                }
                scalar(self.value(name)?)
            }
            ExprKind::TensorFn {
                func,
                target,
                index,
            } => {
                let i = match index {
                    Some(ix) => Some(self.index(ix)?),
                    None => None,
                };
                let v = self.value(target)?;
                Ok(match tensor_prop(v, *func, i)? {
                    Prop::Int(n) => Val::int(n),
                    Prop::Float(x) => Val::Num(to_rational(x)?),
                })
            }
            ExprKind::TupleIndex { target, index } => {
                let i = self.index(index)?;
                let items = match self.value(target)? {
                    ConcreteValue::List(xs) | ConcreteValue::Tuple(xs) => xs,
                    other => return Err(EvalError::WrongKind(format!("cannot index {}", other.kind_name()))),
                };
                let r = resolve_dim(i, items.len()).map_err(|_| EvalError::IndexOutOfRange {
                    index: i,
                    len: items.len(),
                })?;
                scalar(&items[r])
            }
            ExprKind::TupleLen { target } => match self.value(target)? {
                ConcreteValue::List(xs) | ConcreteValue::Tuple(xs) => Ok(Val::int(xs.len() as i64)),
                other => Err(EvalError::WrongKind(format!("{} has no length", other.kind_name()))),
            },
            ExprKind::Arith { op, lhs, rhs } => {
                let a = self.num(lhs)?;
                let b = self.num(rhs)?;
                Ok(Val::Num(match op {
                    ArithOp::Add => a + b,
                    ArithOp::Sub => a - b,
                    ArithOp::Mul => a * b,
                    ArithOp::Div => {
                        if b.is_zero() {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                }))
            }
            ExprKind::Cmp { op, lhs, rhs } => {
                let a = self.eval(lhs)?;
                let b = self.eval(rhs)?;
                compare(*op, &a, &b).map(Val::Bool)
            }
            ExprKind::And(l, r) => {
                let a = self.boolean(l);
                if a == Ok(false) {
                    return Ok(Val::Bool(false));
                }
                let b = self.boolean(r);
                if b == Ok(false) {
                    return Ok(Val::Bool(false));
                }
                a?;
                b?;
                Ok(Val::Bool(true))
            }
            ExprKind::Or(l, r) => {
                let a = self.boolean(l);
                if a == Ok(true) {
                    return Ok(Val::Bool(true));
                }
                let b = self.boolean(r);
                if b == Ok(true) {
                    return Ok(Val::Bool(true));
                }
                a?;
                b?;
                Ok(Val::Bool(false))
            }
            ExprKind::Quant {
                kind,
                bound,
                lo,
                hi,
                body,
            } => {
                let lo = self.index(lo)?;
                let hi = self.index(hi)?;
                if hi >= lo && hi - lo >= MAX_QUANT_SPAN {
                    return Err(EvalError::RangeTooLarge(hi - lo + 1));
                }
                let decisive = *kind == Quantifier::Exists;
                let mut first_err = None;
                for i in lo..=hi {
                    self.quant.push((bound.as_str(), i));
                    let r = self.boolean(body);
                    self.quant.pop();
                    match r {
                        Ok(v) if v == decisive => return Ok(Val::Bool(decisive)),
                        Ok(_) => {}
                        Err(e) => {
                            first_err.get_or_insert(e);
                        }
                    }
                }
                match first_err {
                    Some(e) => Err(e),
                    None => Ok(Val::Bool(!decisive)),
                }
            }
            ExprKind::If {
                cond,
                then,
                otherwise,
            } => match otherwise {
                Some(o) => {
                    if self.boolean(cond)? {
                        self.eval(then)
                    } else {
                        self.eval(o)
                    }
                }
                None => {
                    // not cond or then
                    let c = self.boolean(cond);
                    if c == Ok(false) {
                        return Ok(Val::Bool(true));
                    }
                    let t = self.boolean(then);
                    if t == Ok(true) {
                        return Ok(Val::Bool(true));
                    }
                    c?;
                    t.map(Val::Bool)
                }
            },
        }
    }
}

fn scalar(v: &ConcreteValue) -> Result<Val, EvalError> {
    match v {
        ConcreteValue::Int(i) => Ok(Val::int(*i)),
        ConcreteValue::Float(x) => Ok(Val::Num(to_rational(*x)?)),
        ConcreteValue::Bool(b) => Ok(Val::Bool(*b)),
        ConcreteValue::Str(s) => Ok(Val::Str(s.clone())),
        ConcreteValue::Dtype(c) => Ok(Val::int(*c as i64)),
        other => Err(EvalError::WrongKind(format!(
            "{} is not a primitive value",
            other.kind_name()
        ))),
    }
}

fn compare(op: CmpOp, a: &Val, b: &Val) -> Result<bool, EvalError> {
    let ord = match (a, b) {
        (Val::Num(x), Val::Num(y)) => x.cmp(y),
        (Val::Bool(x), Val::Bool(y)) if !op.is_ordering() => x.cmp(y),
        (Val::Str(x), Val::Str(y)) if !op.is_ordering() => x.cmp(y),
        _ if !op.is_ordering() => {
            // Different runtime kinds under a union type are never equal.
            return Ok(op == CmpOp::Ne);
        }
        _ => return Err(EvalError::WrongKind(format!("cannot order {a:?} and {b:?}"))),
    };
    use std::cmp::Ordering::*;
    Ok(match op {
        CmpOp::Eq => ord == Equal,
        CmpOp::Ne => ord != Equal,
        CmpOp::Lt => ord == Less,
        CmpOp::Le => ord != Greater,
        CmpOp::Gt => ord == Greater,
        CmpOp::Ge => ord != Less,
    })
}

/// Exact rational value of a numeric result, for callers outside the evaluator.
pub fn as_f64(v: &Val) -> Option<f64> {
    match v {
        Val::Num(n) => n.to_f64(),
        _ => None,
    }
}

pub fn is_negative(v: &Val) -> bool {
    matches!(v, Val::Num(n) if n.is_negative())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::compile_rule;
    use crate::value::Tensor;

    fn tensor(shape: &[u64]) -> ConcreteValue {
        ConcreteValue::Tensor(Tensor::summary(shape.to_vec(), 0, 0.0, 1.0))
    }

    #[test]
    fn dim_validity() {
        let r = compile_rule(
            "{v_1: tensor, v_2: int} |= (-1 * ndim(v_1) <= v_2) and (v_2 <= ndim(v_1) - 1)",
        )
        .unwrap();
        let t = tensor(&[2, 3, 4]);
        for (d, want) in [(-3, Verdict::Holds), (3, Verdict::Fails), (-4, Verdict::Fails)] {
            let v = ConcreteValue::Int(d);
            let a = Assignment::new().bind("v_1", &t).bind("v_2", &v);
            assert_eq!(check_rule(&r, &a), want, "dim {d}");
        }
    }

    #[test]
    fn empty_forall_is_true() {
        let r = compile_rule("{v_1: tensor} |= forall i in [0, -1] : false").unwrap();
        let t = tensor(&[1]);
        assert_eq!(check_rule(&r, &Assignment::new().bind("v_1", &t)), Verdict::Holds);
    }

    #[test]
    fn out_of_range_shape_errors() {
        let r = compile_rule("{v_1: tensor} |= shape(v_1, 5) >= 1").unwrap();
        let t = tensor(&[1, 2, 3]);
        assert!(matches!(
            check_rule(&r, &Assignment::new().bind("v_1", &t)),
            Verdict::Errors(EvalError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn non_integral_index_and_div_zero() {
        let t = tensor(&[1, 2, 3]);
        let a = Assignment::new().bind("v_1", &t);
        let r = compile_rule("{v_1: tensor} |= shape(v_1, ndim(v_1) / 2) = 2").unwrap();
        assert!(matches!(check_rule(&r, &a), Verdict::Errors(EvalError::NonIntegralIndex(_))));
        let r = compile_rule("{v_1: tensor} |= ndim(v_1) / (ndim(v_1) - 3) = 1").unwrap();
        assert_eq!(check_rule(&r, &a), Verdict::Errors(EvalError::DivisionByZero));
    }

    #[test]
    fn span_cap() {
        let t = tensor(&[1]);
        let a = Assignment::new().bind("v_1", &t);
        let r = compile_rule("{v_1: tensor} |= forall i in [0, 10000] : ndim(v_1) > 0").unwrap();
        assert!(matches!(check_rule(&r, &a), Verdict::Errors(EvalError::RangeTooLarge(_))));
        let r = compile_rule("{v_1: tensor} |= forall i in [1, 10000] : ndim(v_1) > 0").unwrap();
        assert_eq!(check_rule(&r, &a), Verdict::Holds);
    }

    #[test]
    fn disjunction_decided_despite_error() {
        let t = tensor(&[2]);
        let a = Assignment::new().bind("v_1", &t);
        let r = compile_rule("{v_1: tensor} |= ndim(v_1) = 1 or shape(v_1, 3) = 1").unwrap();
        assert_eq!(check_rule(&r, &a), Verdict::Holds);
        let r = compile_rule("{v_1: tensor} |= ndim(v_1) = 2 or shape(v_1, 3) = 1").unwrap();
        assert!(matches!(check_rule(&r, &a), Verdict::Errors(_)));
    }
}
