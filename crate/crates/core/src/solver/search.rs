//! Depth-first search with bounds propagation over interval domains.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::formula::{Atom, Formula, Lin, Rel, Status, VarId};

pub type Model = Vec<i64>;

#[derive(Debug, Clone, PartialEq)]
pub enum SolveResult {
    Sat(Model),
    Unsat,
    /// Node limit reached before a decision.
    Unknown,
}

impl SolveResult {
    pub fn model(self) -> Option<Model> {
        match self {
            SolveResult::Sat(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub node_limit: usize,
    /// Mixed into the value-choice RNG together with a hash of the formulas.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            node_limit: 20_000,
            seed: 0,
        }
    }
}

pub fn solve(doms: &[(i64, i64)], formulas: &[&Formula], cfg: &SolverConfig) -> SolveResult {
    let mut h = DefaultHasher::new();
    cfg.seed.hash(&mut h);
    doms.hash(&mut h);
    for f in formulas {
        f.hash(&mut h);
    }
    if doms.iter().any(|(a, b)| a > b) {
        return SolveResult::Unsat;
    }
    let mut s = Search {
        rng: ChaCha8Rng::seed_from_u64(h.finish()),
        nodes: 0,
        limit: 0,
        formulas,
    };
    // restarts with a doubling node budget; a run that finishes without
    // hitting its budget is a complete search
    let mut spent = 0;
    let mut budget = FIRST_RUN.min(cfg.node_limit);
    while spent < cfg.node_limit {
        s.nodes = 0;
        s.limit = budget.min(cfg.node_limit - spent);
        match s.dfs(doms.to_vec(), formulas.to_vec()) {
            Ok(Some(m)) => return SolveResult::Sat(m),
            Ok(None) => return SolveResult::Unsat,
            Err(Aborted) => {}
        }
        spent += s.limit;
        budget *= 2;
    }
    SolveResult::Unknown
}

/// Node budget of the first run.
const FIRST_RUN: usize = 64;

struct Aborted;

struct Search<'f, 'a> {
    rng: ChaCha8Rng,
    nodes: usize,
    limit: usize,
    formulas: &'a [&'f Formula],
}

impl<'f, 'a> Search<'f, 'a> {
    fn dfs(
        &mut self,
        mut doms: Vec<(i64, i64)>,
        mut goals: Vec<&'f Formula>,
    ) -> Result<Option<Model>, Aborted> {
        self.nodes += 1;
        if self.nodes > self.limit {
            return Err(Aborted);
        }
        if !propagate(&mut doms, &mut goals) {
            return Ok(None);
        }
        let mut best: Option<(usize, usize)> = None;
        for (i, g) in goals.iter().enumerate() {
            if let Formula::Or(xs) = g {
                let live = xs.iter().filter(|x| x.status(&doms) != Status::False).count();
                if best.is_none_or(|(_, n)| live < n) {
                    best = Some((i, live));
                }
            }
        }
        if let Some((idx, _)) = best {
            let or = goals.remove(idx);
            let Formula::Or(xs) = or else { unreachable!() };
            let mut live: Vec<&'f Formula> = xs
                .iter()
                .filter(|x| x.status(&doms) != Status::False)
                .collect();
            live.shuffle(&mut self.rng);
            for c in live {
                let mut g = goals.clone();
                g.push(c);
                if let Some(m) = self.dfs(doms.clone(), g)? {
                    return Ok(Some(m));
                }
            }
            return Ok(None);
        }
        // variables outside every remaining goal take any value
        let mut used = vec![false; doms.len()];
        for g in &goals {
            for v in g.vars() {
                used[v] = true;
            }
        }
        for (v, d) in doms.iter_mut().enumerate() {
            if !used[v] && d.0 != d.1 {
                let x = self.choose(d.0, d.1);
                *d = (x, x);
            }
        }
        let open = doms
            .iter()
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .min_by_key(|(_, (a, b))| (*b as i128 - *a as i128) as u128);
        let Some((v, _)) = open else {
            let model: Model = doms.iter().map(|d| d.0).collect();
            return Ok(self.formulas.iter().all(|f| f.holds(&model)).then_some(model));
        };
        let (lo, hi) = doms[v];
        let x = self.choose(lo, hi);
        let mut branches = vec![(x, x)];
        let mut rest = Vec::new();
        if x > lo {
            rest.push((lo, x - 1));
        }
        if x < hi {
            rest.push((x + 1, hi));
        }
        rest.shuffle(&mut self.rng);
        branches.extend(rest);
        for (a, b) in branches {
            let mut d = doms.clone();
            d[v] = (a, b);
            if let Some(m) = self.dfs(d, goals.clone())? {
                return Ok(Some(m));
            }
        }
        Ok(None)
    }

    fn choose(&mut self, lo: i64, hi: i64) -> i64 {
        match self.rng.gen_range(0..5) {
            0 => lo,
            1 => hi,
            2 => 0.clamp(lo, hi),
            _ => {
                let span = (hi as i128 - lo as i128 + 1) as f64;
                let off = (span.log2() * self.rng.gen::<f64>()).exp2() as i128 - 1;
                let off = off.clamp(0, hi as i128 - lo as i128);
                if self.rng.gen_bool(0.5) {
                    (lo as i128 + off) as i64
                } else {
                    (hi as i128 - off) as i64
                }
            }
        }
    }
}

const MAX_ROUNDS: usize = 64;

/// Narrow domains and simplify goals; false on conflict.
pub fn propagate<'f>(doms: &mut [(i64, i64)], goals: &mut Vec<&'f Formula>) -> bool {
    for _ in 0..MAX_ROUNDS {
        let mut changed = false;
        let mut stack: Vec<&'f Formula> = std::mem::take(goals);
        let mut next = Vec::with_capacity(stack.len());
        let mut i = 0;
        while i < stack.len() {
            let g = stack[i];
            i += 1;
            match g {
                Formula::Const(true) => {}
                Formula::Const(false) => return false,
                Formula::And(xs) => stack.extend(xs.iter()),
                Formula::Atom(a) => match prune(a, doms) {
                    None => return false,
                    Some(ch) => {
                        changed |= ch;
                        match a.status(doms) {
                            Status::True => {}
                            Status::False => return false,
                            Status::Unknown => next.push(g),
                        }
                    }
                },
                Formula::Or(xs) => {
                    let mut live = None;
                    let mut n = 0;
                    let mut sat = false;
                    for x in xs {
                        match x.status(doms) {
                            Status::True => {
                                sat = true;
                                break;
                            }
                            Status::False => {}
                            Status::Unknown => {
                                n += 1;
                                live = Some(x);
                            }
                        }
                    }
                    if sat {
                        continue;
                    }
                    match (n, live) {
                        (0, _) => return false,
                        (1, Some(x)) => {
                            stack.push(x);
                            changed = true;
                        }
                        _ => next.push(g),
                    }
                }
            }
        }
        *goals = next;
        if !changed {
            break;
        }
    }
    true
}

fn clamp64(x: i128) -> i64 {
    x.clamp(i64::MIN as i128, i64::MAX as i128) as i64
}

fn set_hi(doms: &mut [(i64, i64)], v: VarId, hi: i128) -> Option<bool> {
    if hi < doms[v].1 as i128 {
        doms[v].1 = clamp64(hi);
        if doms[v].0 > doms[v].1 {
            return None;
        }
        return Some(true);
    }
    Some(false)
}

fn set_lo(doms: &mut [(i64, i64)], v: VarId, lo: i128) -> Option<bool> {
    if lo > doms[v].0 as i128 {
        doms[v].0 = clamp64(lo);
        if doms[v].0 > doms[v].1 {
            return None;
        }
        return Some(true);
    }
    Some(false)
}

/// `lin ≤ 0`
fn prune_le(lin: &Lin, doms: &mut [(i64, i64)]) -> Option<bool> {
    let (min, _) = lin.range(doms);
    if min > 0 {
        return None;
    }
    let mut changed = false;
    for &(a, v) in &lin.terms {
        let (lo, hi) = doms[v];
        let a = a as i128;
        let own = if a > 0 { a * lo as i128 } else { a * hi as i128 };
        let r = -(min - own);
        changed |= if a > 0 {
            set_hi(doms, v, r.div_euclid(a))?
        } else {
            // a·x ≤ r with a < 0  ⇔  x ≥ ⌈r / a⌉
            set_lo(doms, v, -(r.div_euclid(-a)))?
        };
    }
    Some(changed)
}

fn neg(lin: &Lin) -> Lin {
    Lin {
        terms: lin.terms.iter().map(|(c, v)| (-c, *v)).collect(),
        k: -lin.k,
    }
}

/// Some(changed) or None on conflict.
fn prune(a: &Atom, doms: &mut [(i64, i64)]) -> Option<bool> {
    match a {
        Atom::Cmp { lin, rel: Rel::Le } => prune_le(lin, doms),
        Atom::Cmp { lin, rel: Rel::Eq } => {
            let a = prune_le(lin, doms)?;
            let b = prune_le(&neg(lin), doms)?;
            Some(a || b)
        }
        Atom::Cmp { lin, rel: Rel::Ne } => {
            let open: Vec<&(i64, VarId)> = lin.terms.iter().filter(|(_, v)| doms[*v].0 != doms[*v].1).collect();
            if open.len() != 1 {
                return Some(false);
            }
            let (c, v) = *open[0];
            let rest: i128 = lin
                .terms
                .iter()
                .filter(|(_, w)| *w != v)
                .map(|(c, w)| *c as i128 * doms[*w].0 as i128)
                .sum::<i128>()
                + lin.k as i128;
            // c·x + rest ≠ 0
            if rest % c as i128 != 0 {
                return Some(false);
            }
            let x = -rest / c as i128;
            let (lo, hi) = doms[v];
            if x == lo as i128 {
                set_lo(doms, v, x + 1)
            } else if x == hi as i128 {
                set_hi(doms, v, x - 1)
            } else {
                Some(false)
            }
        }
        Atom::Multiple {
            var,
            m,
            negated: false,
        } => {
            let (lo, hi) = doms[*var];
            let (m, lo, hi) = (*m as i128, lo as i128, hi as i128);
            let nlo = lo + (m - lo.rem_euclid(m)) % m;
            let nhi = hi - hi.rem_euclid(m);
            let a = set_lo(doms, *var, nlo)?;
            let b = set_hi(doms, *var, nhi)?;
            Some(a || b)
        }
        Atom::Multiple { negated: true, .. } => Some(false),
        Atom::Budget {
            dims,
            dtype,
            widths,
            limit,
        } => {
            let (da, db) = doms[*dtype];
            let wmin = (da..=db)
                .filter_map(|c| widths.get(c as usize).copied())
                .min()? as u128;
            let mut changed = false;
            for (i, d) in dims.iter().enumerate() {
                let others = dims
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .fold(wmin, |acc, (_, e)| acc.saturating_mul(doms[*e].0.max(0) as u128));
                if others > 0 {
                    let cap = (*limit as u128 / others) as i128;
                    changed |= set_hi(doms, *d, cap)?;
                }
            }
            Some(changed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_bounds_propagate() {
        let mut doms = vec![(0, 10), (0, 10)];
        // x + y ≥ 15, x ≤ 6
        let f1 = Formula::cmp(Lin::new(vec![(-1, 0), (-1, 1)], 15), Rel::Le);
        let f2 = Formula::var_le(0, 6);
        let mut goals = vec![&f1, &f2];
        assert!(propagate(&mut doms, &mut goals));
        assert_eq!(doms[1], (9, 10));
    }

    #[test]
    fn contradiction_is_unsat() {
        let a = Formula::var_eq(0, 1);
        let b = Formula::var_eq(0, 2);
        assert_eq!(solve(&[(0, 5)], &[&a, &b], &SolverConfig::default()), SolveResult::Unsat);
    }

    #[test]
    fn disjunction_and_disequality() {
        let f = Formula::or(vec![Formula::var_eq(0, 3), Formula::var_eq(0, 7)]);
        let g = Formula::var_ne(0, 3);
        let m = solve(&[(0, 9)], &[&f, &g], &SolverConfig::default()).model().unwrap();
        assert_eq!(m, vec![7]);
    }

    #[test]
    fn deterministic() {
        let f = Formula::cmp(Lin::new(vec![(1, 0), (1, 1)], -20), Rel::Le);
        let doms = [(-100, 100), (-100, 100)];
        let a = solve(&doms, &[&f], &SolverConfig::default());
        let b = solve(&doms, &[&f], &SolverConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn budget_caps_dims() {
        let f = Formula::Atom(Atom::Budget {
            dims: vec![0, 1],
            dtype: 2,
            widths: vec![4],
            limit: 400,
        });
        let g = Formula::var_ge(0, 10);
        let mut doms = vec![(0, 64), (0, 64), (0, 0)];
        let mut goals = vec![&f, &g];
        assert!(propagate(&mut doms, &mut goals));
        assert_eq!(doms[1].1, 10);
    }
}
