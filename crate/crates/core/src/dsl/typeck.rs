use std::collections::HashMap;
use std::fmt;

use super::ast::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TypeErrorKind {
    /// A tensor or sequence variable used where a primitive value is required.
    NotPrimitive,
    /// Union arm that is not a primitive type.
    InvalidUnion,
    /// Sequence element type that is itself a sequence or a union.
    NestedSequence,
    /// `v[e]` or `v.len` on a variable that is not a list or tuple.
    NotSequence,
    /// Index or quantifier bound that is not an int.
    IndexNotInt,
    /// Tensor function applied to a non-tensor variable.
    NotTensor,
    NotNumeric,
    Incomparable,
    /// String literal outside an equality test against a str variable.
    StringMisuse,
    NotBool,
    /// `if c then e` without `else` in value position.
    MissingElse,
    BranchMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeError {
    pub kind: TypeErrorKind,
    pub span: Span,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeErrorReport {
    pub errors: Vec<TypeError>,
}

impl fmt::Display for TypeErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{} at {}..{}", e.message, e.span.start, e.span.end)?;
        }
        Ok(())
    }
}

impl std::error::Error for TypeErrorReport {}

impl TypeErrorReport {
    pub fn kinds(&self) -> Vec<TypeErrorKind> {
        self.errors.iter().map(|e| e.kind).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LintKind {
    DtypeOrdering,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lint {
    pub kind: LintKind,
    pub span: Span,
    pub message: String,
}

/// A rule whose body type-checks to bool, with per-node types in pre-order.
#[derive(Debug, Clone)]
pub struct TypedRule {
    pub rule: Rule,
    pub node_types: Vec<(Span, TypeExpr)>,
    pub lints: Vec<Lint>,
}

impl PartialEq for TypedRule {
    fn eq(&self, other: &Self) -> bool {
        self.rule == other.rule
    }
}

impl TypedRule {
    pub fn name(&self) -> &str {
        &self.rule.name
    }

    pub fn arity(&self) -> usize {
        self.rule.bindings.len()
    }
}

/// Bindings in declaration order; quantifier-bound names are never included.
pub fn free_variables(rule: &Rule) -> Vec<(String, TypeExpr)> {
    rule.bindings
        .iter()
        .map(|b| (b.name.clone(), b.ty.clone()))
        .collect()
}

pub fn type_check(rule: &Rule) -> Result<TypedRule, TypeErrorReport> {
    let mut cx = Checker {
        env: HashMap::new(),
        errors: Vec::new(),
        lints: Vec::new(),
        types: Vec::new(),
    };
    for b in &rule.bindings {
        cx.check_binding(b, rule.body.span);
        cx.env.insert(b.name.clone(), b.ty.clone());
    }
    let body = cx.expr(&rule.body);
    if let Ty::Known(t) = &body {
        if *t != TypeExpr::Bool {
            cx.err(
                TypeErrorKind::NotBool,
                rule.body.span,
                format!("rule body must be bool, found {t}"),
            );
        }
    }
    if cx.errors.is_empty() {
        Ok(TypedRule {
            rule: rule.clone(),
            node_types: cx.types,
            lints: cx.lints,
        })
    } else {
        Err(TypeErrorReport { errors: cx.errors })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Ty {
    Known(TypeExpr),
    /// Already reported; suppresses cascading errors.
    Error,
}

struct Checker {
    env: HashMap<String, TypeExpr>,
    errors: Vec<TypeError>,
    lints: Vec<Lint>,
    types: Vec<(Span, TypeExpr)>,
}

fn is_int_like(t: &TypeExpr) -> bool {
    matches!(t, TypeExpr::Int | TypeExpr::Dtype)
}

fn is_numeric(t: &TypeExpr) -> bool {
    match t {
        TypeExpr::Int | TypeExpr::Float | TypeExpr::Dtype => true,
        TypeExpr::Union(..) => t.arms().iter().all(|a| is_numeric(a)),
        _ => false,
    }
}

fn is_str_literal(e: &Expr) -> bool {
    matches!(&*e.kind, ExprKind::Literal(Literal::Str(_)))
}

fn is_str_variable(e: &Expr, t: &Ty) -> bool {
    let var_like = matches!(&*e.kind, ExprKind::Var(_) | ExprKind::TupleIndex { .. });
    var_like
        && match t {
            Ty::Known(t) => t.arms().iter().any(|a| **a == TypeExpr::Str),
            Ty::Error => true,
        }
}

impl Checker {
    fn err(&mut self, kind: TypeErrorKind, span: Span, message: String) {
        self.errors.push(TypeError {
            kind,
            span,
            message,
        });
    }

    fn check_binding(&mut self, b: &Binding, span: Span) {
        match &b.ty {
            TypeExpr::Union(..) => {
                if b.ty.arms().iter().any(|a| !a.is_primitive()) {
                    self.err(
                        TypeErrorKind::InvalidUnion,
                        span,
                        format!("union type of '{}' must combine primitive types only", b.name),
                    );
                }
            }
            TypeExpr::List(elem) | TypeExpr::Tuple(elem) => {
                if elem.is_sequence() || matches!(**elem, TypeExpr::Union(..)) {
                    self.err(
                        TypeErrorKind::NestedSequence,
                        span,
                        format!("sequence '{}' may not contain sequences or unions", b.name),
                    );
                }
            }
            _ => {}
        }
    }

    fn record(&mut self, span: Span, t: Ty) -> Ty {
        if let Ty::Known(ty) = &t {
            self.types.push((span, ty.clone()));
        }
        t
    }

    fn expect_int(&mut self, e: &Expr, what: &str) {
        match self.expr(e) {
            Ty::Known(t) if is_int_like(&t) => {}
            Ty::Known(t) => self.err(
                TypeErrorKind::IndexNotInt,
                e.span,
                format!("{what} must be int, found {t}"),
            ),
            Ty::Error => {}
        }
    }

    fn expect_bool(&mut self, e: &Expr, what: &str) {
        match self.expr(e) {
            Ty::Known(TypeExpr::Bool) | Ty::Error => {}
            Ty::Known(t) => self.err(
                TypeErrorKind::NotBool,
                e.span,
                format!("{what} must be bool, found {t}"),
            ),
        }
    }

    fn lookup(&mut self, name: &str, span: Span) -> Ty {
        match self.env.get(name) {
            Some(t) => Ty::Known(t.clone()),
            None => {
                // The parser's scope check makes this unreachable for parsed rules.
                self.err(
                    TypeErrorKind::NotPrimitive,
                    span,
                    format!("unbound variable '{name}'"),
                );
                Ty::Error
            }
        }
    }

    fn expr(&mut self, e: &Expr) -> Ty {
        let t = self.expr_inner(e);
        self.record(e.span, t)
    }

    fn expr_inner(&mut self, e: &Expr) -> Ty {
        match &*e.kind {
            ExprKind::Literal(l) => Ty::Known(match l {
                Literal::Int(_) => TypeExpr::Int,
                Literal::Real(_) => TypeExpr::Float,
                Literal::Bool(_) => TypeExpr::Bool,
                Literal::Str(_) => TypeExpr::Str,
            }),
            ExprKind::Var(name) => match self.lookup(name, e.span) {
                Ty::Known(t) if t.is_primitive() => Ty::Known(t),
                Ty::Known(t @ TypeExpr::Union(..)) => {
                    if t.arms().iter().all(|a| a.is_primitive()) {
                        Ty::Known(t)
                    } else {
                        Ty::Error
                    }
                }
                Ty::Known(t) => {
                    self.err(
                        TypeErrorKind::NotPrimitive,
                        e.span,
                        format!("variable '{name}' of type {t} cannot be used as a value"),
                    );
                    Ty::Error
                }
                Ty::Error => Ty::Error,
            },
            ExprKind::TensorFn {
                func,
                target,
                index,
            } => {
                let target_ty = self.lookup(target, e.span);
                if let Some(i) = index {
                    self.expect_int(i, "shape index");
                }
                match target_ty {
                    Ty::Known(TypeExpr::Tensor) => {}
                    Ty::Known(t) => {
                        self.err(
                            TypeErrorKind::NotTensor,
                            e.span,
                            format!("{}() needs a tensor, '{target}' is {t}", func.name()),
                        );
                        return Ty::Error;
                    }
                    Ty::Error => return Ty::Error,
                }
                Ty::Known(match func {
                    TensorFn::Ndim | TensorFn::Shape => TypeExpr::Int,
                    TensorFn::Dtype => TypeExpr::Dtype,
                    TensorFn::Min | TensorFn::Max => TypeExpr::Float,
                })
            }
            ExprKind::TupleIndex { target, index } => {
                let target_ty = self.lookup(target, e.span);
                self.expect_int(index, "sequence index");
                match target_ty {
                    Ty::Known(TypeExpr::List(elem)) | Ty::Known(TypeExpr::Tuple(elem)) => {
                        if elem.is_primitive() {
                            Ty::Known(*elem)
                        } else {
                            self.err(
                                TypeErrorKind::NotPrimitive,
                                e.span,
                                format!("element of '{target}' has type {elem}, not a value"),
                            );
                            Ty::Error
                        }
                    }
                    Ty::Known(t) => {
                        self.err(
                            TypeErrorKind::NotSequence,
                            e.span,
                            format!("'{target}' of type {t} cannot be indexed"),
                        );
                        Ty::Error
                    }
                    Ty::Error => Ty::Error,
                }
            }
            ExprKind::TupleLen { target } => match self.lookup(target, e.span) {
                Ty::Known(t) if t.is_sequence() => Ty::Known(TypeExpr::Int),
                Ty::Known(t) => {
                    self.err(
                        TypeErrorKind::NotSequence,
                        e.span,
                        format!("'{target}' of type {t} has no length"),
                    );
                    Ty::Error
                }
                Ty::Error => Ty::Error,
            },
            ExprKind::Arith { op, lhs, rhs } => {
                let l = self.expr(lhs);
                let r = self.expr(rhs);
                let mut bad = false;
                for (side, t) in [(lhs, &l), (rhs, &r)] {
                    if let Ty::Known(t) = t {
                        if !is_numeric(t) {
                            let kind = if is_str_literal(side) {
                                TypeErrorKind::StringMisuse
                            } else {
                                TypeErrorKind::NotNumeric
                            };
                            self.err(
                                kind,
                                side.span,
                                format!("operand of '{}' must be numeric, found {t}", op.symbol()),
                            );
                            bad = true;
                        }
                    } else {
                        bad = true;
                    }
                }
                if bad {
                    return Ty::Error;
                }
                match (&l, &r) {
                    (Ty::Known(a), Ty::Known(b)) if is_int_like(a) && is_int_like(b) => {
                        Ty::Known(TypeExpr::Int)
                    }
                    _ => Ty::Known(TypeExpr::Float),
                }
            }
            ExprKind::Cmp { op, lhs, rhs } => {
                let l = self.expr(lhs);
                let r = self.expr(rhs);
                self.check_cmp(e, *op, lhs, &l, rhs, &r);
                Ty::Known(TypeExpr::Bool)
            }
            ExprKind::And(a, b) | ExprKind::Or(a, b) => {
                let word = if matches!(&*e.kind, ExprKind::And(..)) {
                    "and"
                } else {
                    "or"
                };
                self.expect_bool(a, &format!("operand of '{word}'"));
                self.expect_bool(b, &format!("operand of '{word}'"));
                Ty::Known(TypeExpr::Bool)
            }
            ExprKind::Quant {
                bound, lo, hi, body, ..
            } => {
                self.expect_int(lo, "quantifier lower bound");
                self.expect_int(hi, "quantifier upper bound");
                let saved = self.env.insert(bound.clone(), TypeExpr::Int);
                self.expect_bool(body, "quantifier body");
                match saved {
                    Some(t) => self.env.insert(bound.clone(), t),
                    None => self.env.remove(bound),
                };
                Ty::Known(TypeExpr::Bool)
            }
            ExprKind::If {
                cond,
                then,
                otherwise,
            } => {
                self.expect_bool(cond, "condition");
                let t = self.expr(then);
                match otherwise {
                    None => match t {
                        Ty::Known(TypeExpr::Bool) | Ty::Error => Ty::Known(TypeExpr::Bool),
                        Ty::Known(other) => {
                            self.err(
                                TypeErrorKind::MissingElse,
                                e.span,
                                format!("'if' without 'else' must be bool, found {other}"),
                            );
                            Ty::Error
                        }
                    },
                    Some(o) => {
                        let u = self.expr(o);
                        match (t, u) {
                            (Ty::Known(a), Ty::Known(b)) => {
                                if a == b {
                                    Ty::Known(a)
                                } else if is_numeric(&a) && is_numeric(&b) {
                                    if is_int_like(&a) && is_int_like(&b) {
                                        Ty::Known(TypeExpr::Int)
                                    } else {
                                        Ty::Known(TypeExpr::Float)
                                    }
                                } else {
                                    self.err(
                                        TypeErrorKind::BranchMismatch,
                                        e.span,
                                        format!("branches have types {a} and {b}"),
                                    );
                                    Ty::Error
                                }
                            }
                            _ => Ty::Error,
                        }
                    }
                }
            }
        }
    }

    fn check_cmp(&mut self, e: &Expr, op: CmpOp, lhs: &Expr, l: &Ty, rhs: &Expr, r: &Ty) {
        let (ls, rs) = (is_str_literal(lhs), is_str_literal(rhs));
        if ls || rs {
            let other = if ls { (rhs, r) } else { (lhs, l) };
            let ok = !(ls && rs) && !op.is_ordering() && is_str_variable(other.0, other.1);
            if !ok {
                self.err(
                    TypeErrorKind::StringMisuse,
                    e.span,
                    "string literals may only be tested with = or != against a str variable"
                        .into(),
                );
            }
            return;
        }
        let (Ty::Known(a), Ty::Known(b)) = (l, r) else {
            return;
        };
        let compatible = |x: &TypeExpr, y: &TypeExpr| -> bool {
            x.arms().iter().any(|xa| {
                y.arms().iter().any(|ya| {
                    (is_numeric(xa) && is_numeric(ya))
                        || (**xa == TypeExpr::Bool && **ya == TypeExpr::Bool && !op.is_ordering())
                        || (**xa == TypeExpr::Str && **ya == TypeExpr::Str && !op.is_ordering())
                })
            })
        };
        if !compatible(a, b) {
            self.err(
                TypeErrorKind::Incomparable,
                e.span,
                format!("cannot compare {a} {} {b}", op.symbol()),
            );
            return;
        }
        if op.is_ordering() && (*a == TypeExpr::Dtype || *b == TypeExpr::Dtype) {
            self.lints.push(Lint {
                kind: LintKind::DtypeOrdering,
                span: e.span,
                message: "ordering comparison on dtype codes is rarely meaningful".into(),
            });
        }
    }
}
