use std::fmt;
use std::hash::{Hash, Hasher};

use num_bigint::BigInt;
use num_rational::BigRational;

/// Byte offsets into the source text, `start..end`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn join(self, other: Span) -> Span {
        Span::new(self.start.min(other.start), self.end.max(other.end))
    }
}

/// Declared type of a rule binding or API parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeExpr {
    Int,
    Float,
    Bool,
    Dtype,
    Str,
    Tensor,
    List(Box<TypeExpr>),
    Tuple(Box<TypeExpr>),
    Union(Box<TypeExpr>, Box<TypeExpr>),
}

impl TypeExpr {
    pub fn is_primitive(&self) -> bool {
        matches!(
            self,
            TypeExpr::Int | TypeExpr::Float | TypeExpr::Bool | TypeExpr::Dtype | TypeExpr::Str
        )
    }

    pub fn is_sequence(&self) -> bool {
        matches!(self, TypeExpr::List(_) | TypeExpr::Tuple(_))
    }

    /// Primitive arms of a union, or the type itself.
    pub fn arms(&self) -> Vec<&TypeExpr> {
        match self {
            TypeExpr::Union(l, r) => {
                let mut out = l.arms();
                out.extend(r.arms());
                out
            }
            other => vec![other],
        }
    }

    /// True when some value could inhabit both types.
    pub fn overlaps(&self, other: &TypeExpr) -> bool {
        let a = self.arms();
        let b = other.arms();
        a.iter().any(|x| b.iter().any(|y| x == y))
    }
}

impl fmt::Display for TypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeExpr::Int => f.write_str("int"),
            TypeExpr::Float => f.write_str("float"),
            TypeExpr::Bool => f.write_str("bool"),
            TypeExpr::Dtype => f.write_str("dtype"),
            TypeExpr::Str => f.write_str("str"),
            TypeExpr::Tensor => f.write_str("tensor"),
            TypeExpr::List(t) => write!(f, "list({t})"),
            TypeExpr::Tuple(t) => write!(f, "tuple({t})"),
            TypeExpr::Union(l, r) => write!(f, "{l}|{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Literal {
    Int(i64),
    Real(BigRational),
    Bool(bool),
    Str(String),
}

impl Literal {
    pub fn real_from_decimal(int_part: &str, frac_part: &str, negative: bool) -> Option<Literal> {
        let digits = format!("{int_part}{frac_part}");
        let mut num: BigInt = digits.parse().ok()?;
        if negative {
            num = -num;
        }
        let den = BigInt::from(10u32).pow(frac_part.len() as u32);
        Some(Literal::Real(BigRational::new(num, den)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TensorFn {
    Ndim,
    Shape,
    Dtype,
    Min,
    Max,
}

impl TensorFn {
    pub fn name(self) -> &'static str {
        match self {
            TensorFn::Ndim => "ndim",
            TensorFn::Shape => "shape",
            TensorFn::Dtype => "dtype_",
            TensorFn::Min => "min",
            TensorFn::Max => "max",
        }
    }

    pub fn from_name(s: &str) -> Option<TensorFn> {
        Some(match s {
            "ndim" => TensorFn::Ndim,
            "shape" => TensorFn::Shape,
            "dtype_" => TensorFn::Dtype,
            "min" => TensorFn::Min,
            "max" => TensorFn::Max,
            _ => return None,
        })
    }

    pub fn takes_index(self) -> bool {
        self == TensorFn::Shape
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Gt,
    Lt,
    Ge,
    Le,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
        }
    }

    /// The operator whose truth is the complement of this one.
    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Ge => CmpOp::Lt,
            CmpOp::Le => CmpOp::Gt,
        }
    }

    /// `a op b` iff `b op.swap() a`.
    pub fn swap(self) -> CmpOp {
        match self {
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Ge => CmpOp::Le,
            CmpOp::Le => CmpOp::Ge,
            other => other,
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantifier {
    ForAll,
    Exists,
}

impl Quantifier {
    pub fn keyword(self) -> &'static str {
        match self {
            Quantifier::ForAll => "forall",
            Quantifier::Exists => "exists",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ExprKind {
    Literal(Literal),
    Var(String),
    TensorFn {
        func: TensorFn,
        target: String,
        index: Option<Expr>,
    },
    TupleIndex {
        target: String,
        index: Expr,
    },
    TupleLen {
        target: String,
    },
    Arith {
        op: ArithOp,
        lhs: Expr,
        rhs: Expr,
    },
    Cmp {
        op: CmpOp,
        lhs: Expr,
        rhs: Expr,
    },
    And(Expr, Expr),
    Or(Expr, Expr),
    Quant {
        kind: Quantifier,
        bound: String,
        lo: Expr,
        hi: Expr,
        body: Expr,
    },
    If {
        cond: Expr,
        then: Expr,
        otherwise: Option<Expr>,
    },
}

/// An expression node. Equality and hashing ignore the span.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: Box<ExprKind>,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl Eq for Expr {}

impl Hash for Expr {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.kind.hash(state)
    }
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Expr {
        Expr {
            kind: Box::new(kind),
            span,
        }
    }

    /// Node without source position, for programmatic construction.
    pub fn synth(kind: ExprKind) -> Expr {
        Expr::new(kind, Span::default())
    }

    pub fn int(v: i64) -> Expr {
        Expr::synth(ExprKind::Literal(Literal::Int(v)))
    }

    pub fn var(name: &str) -> Expr {
        Expr::synth(ExprKind::Var(name.to_string()))
    }

    pub fn call(func: TensorFn, target: &str, index: Option<Expr>) -> Expr {
        Expr::synth(ExprKind::TensorFn {
            func,
            target: target.to_string(),
            index,
        })
    }

    pub fn arith(op: ArithOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::synth(ExprKind::Arith { op, lhs, rhs })
    }

    pub fn cmp(op: CmpOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::synth(ExprKind::Cmp { op, lhs, rhs })
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Expr {
        Expr::synth(ExprKind::And(lhs, rhs))
    }

    pub fn or(lhs: Expr, rhs: Expr) -> Expr {
        Expr::synth(ExprKind::Or(lhs, rhs))
    }

    /// Pre-order walk over every node.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match &*self.kind {
            ExprKind::Literal(_) | ExprKind::Var(_) | ExprKind::TupleLen { .. } => {}
            ExprKind::TensorFn { index, .. } => {
                if let Some(i) = index {
                    i.walk(f)
                }
            }
            ExprKind::TupleIndex { index, .. } => index.walk(f),
            ExprKind::Arith { lhs, rhs, .. } | ExprKind::Cmp { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            ExprKind::And(l, r) | ExprKind::Or(l, r) => {
                l.walk(f);
                r.walk(f);
            }
            ExprKind::Quant { lo, hi, body, .. } => {
                lo.walk(f);
                hi.walk(f);
                body.walk(f);
            }
            ExprKind::If {
                cond,
                then,
                otherwise,
            } => {
                cond.walk(f);
                then.walk(f);
                if let Some(e) = otherwise {
                    e.walk(f)
                }
            }
        }
    }

    /// Nesting depth; leaves have depth 1.
    pub fn depth(&self) -> usize {
        let child = match &*self.kind {
            ExprKind::Literal(_) | ExprKind::Var(_) | ExprKind::TupleLen { .. } => 0,
            ExprKind::TensorFn { index, .. } => index.as_ref().map_or(0, |i| i.depth()),
            ExprKind::TupleIndex { index, .. } => index.depth(),
            ExprKind::Arith { lhs, rhs, .. } | ExprKind::Cmp { lhs, rhs, .. } => {
                lhs.depth().max(rhs.depth())
            }
            ExprKind::And(l, r) | ExprKind::Or(l, r) => l.depth().max(r.depth()),
            ExprKind::Quant { lo, hi, body, .. } => lo.depth().max(hi.depth()).max(body.depth()),
            ExprKind::If {
                cond,
                then,
                otherwise,
            } => cond
                .depth()
                .max(then.depth())
                .max(otherwise.as_ref().map_or(0, |e| e.depth())),
        };
        child + 1
    }

    /// Names of variables referenced by this expression (binding or quantifier names).
    pub fn referenced_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |e| match &*e.kind {
            ExprKind::Var(n) => out.push(n.as_str()),
            ExprKind::TensorFn { target, .. }
            | ExprKind::TupleIndex { target, .. }
            | ExprKind::TupleLen { target } => out.push(target.as_str()),
            _ => {}
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Binding {
    pub name: String,
    pub ty: TypeExpr,
}

/// `{v: τ, ...} |= body` plus identifying metadata.
#[derive(Debug, Clone)]
pub struct Rule {
    pub name: String,
    pub description: String,
    pub bindings: Vec<Binding>,
    pub body: Expr,
}

impl PartialEq for Rule {
    /// Structural equality of the formal part; name and description are metadata.
    fn eq(&self, other: &Self) -> bool {
        self.bindings == other.bindings && self.body == other.body
    }
}

impl Eq for Rule {}

impl Hash for Rule {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.bindings.hash(state);
        self.body.hash(state);
    }
}

impl Rule {
    pub fn binding(&self, name: &str) -> Option<&Binding> {
        self.bindings.iter().find(|b| b.name == name)
    }

    /// Bindings never referenced in the body.
    pub fn unused_bindings(&self) -> Vec<&str> {
        let used = self.body.referenced_names();
        self.bindings
            .iter()
            .filter(|b| !used.contains(&b.name.as_str()))
            .map(|b| b.name.as_str())
            .collect()
    }
}
