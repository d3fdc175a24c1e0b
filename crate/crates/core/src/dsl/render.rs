use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::ast::*;

const PREC_OR: u8 = 1;
const PREC_AND: u8 = 2;
const PREC_CMP: u8 = 3;
const PREC_ADD: u8 = 4;
const PREC_MUL: u8 = 5;
const PREC_ATOM: u8 = 6;

/// Canonical text of a rule: `{v_1: tensor, ...} |= body`.
pub fn render_rule(rule: &Rule) -> String {
    let bindings: Vec<String> = rule
        .bindings
        .iter()
        .map(|b| format!("{}: {}", b.name, b.ty))
        .collect();
    format!("{{{}}} |= {}", bindings.join(", "), render_expr(&rule.body))
}

pub fn render_expr(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e, 0, true);
    out
}

fn prec(e: &Expr) -> u8 {
    match &*e.kind {
        ExprKind::Or(..) => PREC_OR,
        ExprKind::And(..) => PREC_AND,
        ExprKind::Cmp { .. } => PREC_CMP,
        ExprKind::Arith { op, .. } => match op {
            ArithOp::Add | ArithOp::Sub => PREC_ADD,
            ArithOp::Mul | ArithOp::Div => PREC_MUL,
        },
        ExprKind::Quant { .. } | ExprKind::If { .. } => 0,
        _ => PREC_ATOM,
    }
}

fn open_ended(e: &Expr) -> bool {
    matches!(&*e.kind, ExprKind::Quant { .. } | ExprKind::If { .. })
}

/// `tail` is true when nothing follows this node up to the enclosing delimiter,
/// so a quantifier or conditional body may extend to the right unparenthesized.
fn write_expr(out: &mut String, e: &Expr, ctx: u8, tail: bool) {
    let needs_parens = prec(e) < ctx || (open_ended(e) && !tail);
    if needs_parens {
        out.push('(');
        write_bare(out, e, true);
        out.push(')');
    } else {
        write_bare(out, e, tail);
    }
}

fn write_bare(out: &mut String, e: &Expr, tail: bool) {
    match &*e.kind {
        ExprKind::Literal(l) => write_literal(out, l),
        ExprKind::Var(n) => out.push_str(n),
        ExprKind::TensorFn {
            func,
            target,
            index,
        } => {
            out.push_str(func.name());
            out.push('(');
            out.push_str(target);
            if let Some(i) = index {
                out.push_str(", ");
                write_expr(out, i, 0, true);
            }
            out.push(')');
        }
        ExprKind::TupleIndex { target, index } => {
            out.push_str(target);
            out.push('[');
            write_expr(out, index, 0, true);
            out.push(']');
        }
        ExprKind::TupleLen { target } => {
            out.push_str(target);
            out.push_str(".len");
        }
        ExprKind::Arith { op, lhs, rhs } => {
            let p = prec(e);
            write_expr(out, lhs, p, false);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write_expr(out, rhs, p + 1, tail);
        }
        ExprKind::Cmp { op, lhs, rhs } => {
            write_expr(out, lhs, PREC_ADD, false);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write_expr(out, rhs, PREC_ADD, tail);
        }
        ExprKind::And(l, r) => {
            write_expr(out, l, PREC_AND, false);
            out.push_str(" and ");
            write_expr(out, r, PREC_AND + 1, tail);
        }
        ExprKind::Or(l, r) => {
            write_expr(out, l, PREC_OR, false);
            out.push_str(" or ");
            write_expr(out, r, PREC_OR + 1, tail);
        }
        ExprKind::Quant {
            kind,
            bound,
            lo,
            hi,
            body,
        } => {
            out.push_str(kind.keyword());
            out.push(' ');
            out.push_str(bound);
            out.push_str(" in [");
            write_expr(out, lo, 0, true);
            out.push_str(", ");
            write_expr(out, hi, 0, true);
            out.push_str("] : ");
            write_expr(out, body, 0, true);
        }
        ExprKind::If {
            cond,
            then,
            otherwise,
        } => {
            out.push_str("if ");
            write_expr(out, cond, 0, true);
            out.push_str(" then ");
            write_expr(out, then, 0, otherwise.is_none());
            if let Some(o) = otherwise {
                out.push_str(" else ");
                write_expr(out, o, 0, true);
            }
        }
    }
}

fn write_literal(out: &mut String, l: &Literal) {
    match l {
        Literal::Int(v) => out.push_str(&v.to_string()),
        Literal::Real(r) => out.push_str(&format_decimal(r)),
        Literal::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Literal::Str(s) => {
            out.push('"');
            for ch in s.chars() {
                match ch {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    c => out.push(c),
                }
            }
            out.push('"');
        }
    }
}

/// Exact decimal text of a rational with a terminating expansion; always has a
/// fractional part so it re-parses as a real literal.
pub fn format_decimal(r: &BigRational) -> String {
    let mut den = r.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let (mut twos, mut fives) = (0u32, 0u32);
    while den.is_even() && !den.is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        // Non-terminating: fall back to a long fixed expansion.
        let scaled = (r * BigRational::from_integer(BigInt::from(10).pow(18))).round();
        return insert_point(scaled.to_integer(), 18);
    }
    let digits = twos.max(fives).max(1);
    let scaled = r * BigRational::from_integer(BigInt::from(10).pow(digits));
    insert_point(scaled.to_integer(), digits)
}

fn insert_point(n: BigInt, digits: u32) -> String {
    let neg = n.is_negative();
    let mut s = n.abs().to_string();
    let d = digits as usize;
    while s.len() <= d {
        s.insert(0, '0');
    }
    let (int, frac) = s.split_at(s.len() - d);
    let mut frac = frac.trim_end_matches('0').to_string();
    if frac.is_empty() {
        frac.push('0');
    }
    format!("{}{int}.{frac}", if neg { "-" } else { "" })
}
