//! Quantifier-free formulas over bounded integer variables.

use std::fmt::Write as _;

pub type VarId = usize;

/// `Σ coef·var + k`, terms sorted by variable and free of zero coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Lin {
    pub terms: Vec<(i64, VarId)>,
    pub k: i64,
}

impl Lin {
    pub fn new(mut terms: Vec<(i64, VarId)>, k: i64) -> Lin {
        terms.sort_by_key(|t| t.1);
        let mut out: Vec<(i64, VarId)> = Vec::with_capacity(terms.len());
        for (c, v) in terms {
            match out.last_mut() {
                Some(last) if last.1 == v => last.0 += c,
                _ => out.push((c, v)),
            }
        }
        out.retain(|t| t.0 != 0);
        Lin { terms: out, k }
    }

    pub fn var(v: VarId) -> Lin {
        Lin::new(vec![(1, v)], 0)
    }

    pub fn eval(&self, model: &[i64]) -> i128 {
        self.terms
            .iter()
            .map(|(c, v)| *c as i128 * model[*v] as i128)
            .sum::<i128>()
            + self.k as i128
    }

    /// Smallest and largest value over the box `doms`.
    pub fn range(&self, doms: &[(i64, i64)]) -> (i128, i128) {
        let mut lo = self.k as i128;
        let mut hi = self.k as i128;
        for (c, v) in &self.terms {
            let (a, b) = doms[*v];
            let (x, y) = (*c as i128 * a as i128, *c as i128 * b as i128);
            lo += x.min(y);
            hi += x.max(y);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rel {
    Le,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Atom {
    /// `lin rel 0`
    Cmp { lin: Lin, rel: Rel },
    /// `var ≡ 0 (mod m)`, or its complement when `negated`.
    Multiple { var: VarId, m: i64, negated: bool },
    /// `Π dims · width[dtype] ≤ limit`; every dim is non-negative.
    Budget {
        dims: Vec<VarId>,
        dtype: VarId,
        widths: Vec<u64>,
        limit: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    True,
    False,
    Unknown,
}

impl Atom {
    pub fn holds(&self, m: &[i64]) -> bool {
        match self {
            Atom::Cmp { lin, rel } => {
                let v = lin.eval(m);
                match rel {
                    Rel::Le => v <= 0,
                    Rel::Eq => v == 0,
                    Rel::Ne => v != 0,
                }
            }
            Atom::Multiple { var, m: k, negated } => (m[*var].rem_euclid(*k) == 0) != *negated,
            Atom::Budget {
                dims,
                dtype,
                widths,
                limit,
            } => {
                let w = widths.get(m[*dtype] as usize).copied().unwrap_or(u64::MAX) as u128;
                let p = dims.iter().fold(w, |acc, d| acc.saturating_mul(m[*d].max(0) as u128));
                p <= *limit as u128
            }
        }
    }

    pub fn status(&self, doms: &[(i64, i64)]) -> Status {
        match self {
            Atom::Cmp { lin, rel } => {
                let (lo, hi) = lin.range(doms);
                match rel {
                    Rel::Le if hi <= 0 => Status::True,
                    Rel::Le if lo > 0 => Status::False,
                    Rel::Eq if lo == 0 && hi == 0 => Status::True,
                    Rel::Eq if lo > 0 || hi < 0 => Status::False,
                    Rel::Ne if lo > 0 || hi < 0 => Status::True,
                    Rel::Ne if lo == 0 && hi == 0 => Status::False,
                    _ => Status::Unknown,
                }
            }
            Atom::Multiple { var, m, negated } => {
                let (a, b) = doms[*var];
                let first = a + (m - a.rem_euclid(*m)) % m;
                let st = if first > b {
                    Status::False
                } else if a == b {
                    Status::True
                } else {
                    Status::Unknown
                };
                match (st, negated) {
                    (Status::True, true) => Status::False,
                    (Status::False, true) => Status::True,
                    (s, _) => s,
                }
            }
            Atom::Budget {
                dims,
                dtype,
                widths,
                limit,
            } => {
                let (da, db) = doms[*dtype];
                let ws: Vec<u64> = (da..=db)
                    .filter_map(|c| widths.get(c as usize).copied())
                    .collect();
                let (wmin, wmax) = match (ws.iter().min(), ws.iter().max()) {
                    (Some(a), Some(b)) => (*a as u128, *b as u128),
                    _ => return Status::False,
                };
                let pmin = dims
                    .iter()
                    .fold(wmin, |acc, d| acc.saturating_mul(doms[*d].0.max(0) as u128));
                let pmax = dims
                    .iter()
                    .fold(wmax, |acc, d| acc.saturating_mul(doms[*d].1.max(0) as u128));
                if pmax <= *limit as u128 {
                    Status::True
                } else if pmin > *limit as u128 {
                    Status::False
                } else {
                    Status::Unknown
                }
            }
        }
    }

    pub fn vars(&self, out: &mut Vec<VarId>) {
        match self {
            Atom::Cmp { lin, .. } => out.extend(lin.terms.iter().map(|t| t.1)),
            Atom::Multiple { var, .. } => out.push(*var),
            Atom::Budget { dims, dtype, .. } => {
                out.extend(dims);
                out.push(*dtype);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Const(bool),
    Atom(Atom),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub const TRUE: Formula = Formula::Const(true);
    pub const FALSE: Formula = Formula::Const(false);

    /// `lin rel 0`, folded to a constant when `lin` has no variables.
    pub fn cmp(lin: Lin, rel: Rel) -> Formula {
        if lin.terms.is_empty() {
            let v = lin.k;
            return Formula::Const(match rel {
                Rel::Le => v <= 0,
                Rel::Eq => v == 0,
                Rel::Ne => v != 0,
            });
        }
        Formula::Atom(Atom::Cmp { lin, rel })
    }

    /// `a ≤ b` for linear forms given as (terms, k).
    pub fn le(a: Lin, b: Lin) -> Formula {
        Formula::cmp(sub(&a, &b), Rel::Le)
    }

    pub fn eq(a: Lin, b: Lin) -> Formula {
        Formula::cmp(sub(&a, &b), Rel::Eq)
    }

    pub fn ne(a: Lin, b: Lin) -> Formula {
        Formula::cmp(sub(&a, &b), Rel::Ne)
    }

    pub fn var_eq(v: VarId, c: i64) -> Formula {
        Formula::cmp(Lin::new(vec![(1, v)], -c), Rel::Eq)
    }

    pub fn var_ne(v: VarId, c: i64) -> Formula {
        Formula::cmp(Lin::new(vec![(1, v)], -c), Rel::Ne)
    }

    pub fn var_ge(v: VarId, c: i64) -> Formula {
        Formula::cmp(Lin::new(vec![(-1, v)], c), Rel::Le)
    }

    pub fn var_le(v: VarId, c: i64) -> Formula {
        Formula::cmp(Lin::new(vec![(1, v)], -c), Rel::Le)
    }

    pub fn var_in(v: VarId, lo: i64, hi: i64) -> Formula {
        Formula::and(vec![Formula::var_ge(v, lo), Formula::var_le(v, hi)])
    }

    pub fn and(parts: Vec<Formula>) -> Formula {
        let mut out = Vec::with_capacity(parts.len());
        for p in parts {
            match p {
                Formula::Const(true) => {}
                Formula::Const(false) => return Formula::FALSE,
                Formula::And(xs) => out.extend(xs),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::TRUE,
            1 => out.pop().unwrap(),
            _ => Formula::And(out),
        }
    }

    pub fn or(parts: Vec<Formula>) -> Formula {
        let mut out = Vec::with_capacity(parts.len());
        for p in parts {
            match p {
                Formula::Const(false) => {}
                Formula::Const(true) => return Formula::TRUE,
                Formula::Or(xs) => out.extend(xs),
                other => out.push(other),
            }
        }
        match out.len() {
            0 => Formula::FALSE,
            1 => out.pop().unwrap(),
            _ => Formula::Or(out),
        }
    }

    /// Logical complement, pushed down to atoms.
    pub fn negate(&self) -> Formula {
        match self {
            Formula::Const(b) => Formula::Const(!b),
            Formula::And(xs) => Formula::or(xs.iter().map(|x| x.negate()).collect()),
            Formula::Or(xs) => Formula::and(xs.iter().map(|x| x.negate()).collect()),
            Formula::Atom(Atom::Cmp { lin, rel }) => match rel {
                Rel::Eq => Formula::cmp(lin.clone(), Rel::Ne),
                Rel::Ne => Formula::cmp(lin.clone(), Rel::Eq),
                // ¬(l ≤ 0) ⇔ l ≥ 1 ⇔ -l + 1 ≤ 0
                Rel::Le => Formula::cmp(
                    Lin::new(lin.terms.iter().map(|(c, v)| (-c, *v)).collect(), 1 - lin.k),
                    Rel::Le,
                ),
            },
            Formula::Atom(Atom::Multiple { var, m, negated }) => Formula::Atom(Atom::Multiple {
                var: *var,
                m: *m,
                negated: !negated,
            }),
            Formula::Atom(a @ Atom::Budget { .. }) => {
                // Only emitted by the base formula, which is never negated.
                Formula::Atom(a.clone())
            }
        }
    }

    pub fn holds(&self, m: &[i64]) -> bool {
        match self {
            Formula::Const(b) => *b,
            Formula::Atom(a) => a.holds(m),
            Formula::And(xs) => xs.iter().all(|x| x.holds(m)),
            Formula::Or(xs) => xs.iter().any(|x| x.holds(m)),
        }
    }

    pub fn status(&self, doms: &[(i64, i64)]) -> Status {
        match self {
            Formula::Const(true) => Status::True,
            Formula::Const(false) => Status::False,
            Formula::Atom(a) => a.status(doms),
            Formula::And(xs) => {
                let mut all = true;
                for x in xs {
                    match x.status(doms) {
                        Status::False => return Status::False,
                        Status::Unknown => all = false,
                        Status::True => {}
                    }
                }
                if all {
                    Status::True
                } else {
                    Status::Unknown
                }
            }
            Formula::Or(xs) => {
                let mut none = true;
                for x in xs {
                    match x.status(doms) {
                        Status::True => return Status::True,
                        Status::Unknown => none = false,
                        Status::False => {}
                    }
                }
                if none {
                    Status::False
                } else {
                    Status::Unknown
                }
            }
        }
    }

    pub fn vars(&self) -> Vec<VarId> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<VarId>) {
        match self {
            Formula::Const(_) => {}
            Formula::Atom(a) => a.vars(out),
            Formula::And(xs) | Formula::Or(xs) => xs.iter().for_each(|x| x.collect_vars(out)),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Formula::Const(_) | Formula::Atom(_) => 1,
            Formula::And(xs) | Formula::Or(xs) => 1 + xs.iter().map(|x| x.size()).sum::<usize>(),
        }
    }
}

pub fn sub(a: &Lin, b: &Lin) -> Lin {
    let mut terms = a.terms.clone();
    terms.extend(b.terms.iter().map(|(c, v)| (-c, *v)));
    Lin::new(terms, a.k - b.k)
}

/// SMT-LIB 2 rendering of a formula set, for inspection with external tools.
pub fn to_smtlib(names: &[String], doms: &[(i64, i64)], formulas: &[&Formula]) -> String {
    let mut out = String::from("(set-logic QF_LIA)\n");
    let sym = |v: VarId| format!("|{}|", names[v]);
    for (v, (lo, hi)) in doms.iter().enumerate() {
        let _ = writeln!(out, "(declare-const {} Int)", sym(v));
        let _ = writeln!(out, "(assert (and (<= {} {}) (<= {} {})))", int(*lo), sym(v), sym(v), int(*hi));
    }
    for f in formulas {
        let _ = writeln!(out, "(assert {})", smt(f, &sym));
    }
    out.push_str("(check-sat)\n(get-model)\n");
    out
}

fn int(v: i64) -> String {
    if v < 0 {
        format!("(- {})", v.unsigned_abs())
    } else {
        v.to_string()
    }
}

fn smt(f: &Formula, sym: &dyn Fn(VarId) -> String) -> String {
    match f {
        Formula::Const(b) => b.to_string(),
        Formula::And(xs) => format!("(and {})", xs.iter().map(|x| smt(x, sym)).collect::<Vec<_>>().join(" ")),
        Formula::Or(xs) => format!("(or {})", xs.iter().map(|x| smt(x, sym)).collect::<Vec<_>>().join(" ")),
        Formula::Atom(Atom::Cmp { lin, rel }) => {
            let mut parts: Vec<String> = lin
                .terms
                .iter()
                .map(|(c, v)| format!("(* {} {})", int(*c), sym(*v)))
                .collect();
            parts.push(int(lin.k));
            let sum = format!("(+ {})", parts.join(" "));
            match rel {
                Rel::Le => format!("(<= {sum} 0)"),
                Rel::Eq => format!("(= {sum} 0)"),
                Rel::Ne => format!("(not (= {sum} 0))"),
            }
        }
        Formula::Atom(Atom::Multiple { var, m, negated }) => {
            let a = format!("(= (mod {} {m}) 0)", sym(*var));
            if *negated {
                format!("(not {a})")
            } else {
                a
            }
        }
        Formula::Atom(Atom::Budget {
            dims,
            dtype,
            widths,
            limit,
        }) => {
            let w = widths
                .iter()
                .enumerate()
                .rev()
                .fold("0".to_string(), |acc, (c, w)| {
                    format!("(ite (= {} {c}) {w} {acc})", sym(*dtype))
                });
            let prod = dims.iter().fold(w, |acc, d| format!("(* {acc} {})", sym(*d)));
            format!("(<= {prod} {limit})")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negation_of_le_is_strict_complement() {
        let f = Formula::var_le(0, 3);
        let n = f.negate();
        for x in -2..8 {
            assert_eq!(f.holds(&[x]), !n.holds(&[x]));
        }
    }

    #[test]
    fn constant_folding() {
        assert_eq!(Formula::cmp(Lin::new(vec![], 1), Rel::Le), Formula::FALSE);
        assert_eq!(Formula::and(vec![Formula::TRUE, Formula::TRUE]), Formula::TRUE);
        assert_eq!(Formula::or(vec![]), Formula::FALSE);
    }

    #[test]
    fn lin_merges_terms() {
        let l = Lin::new(vec![(2, 1), (-2, 1), (3, 0)], 4);
        assert_eq!(l.terms, vec![(3, 0)]);
    }
}
