//! Bounded constraint solving over symbolic input descriptors.

pub mod formula;
pub mod layout;
pub mod lower;
pub mod search;

pub use formula::{to_smtlib, Atom, Formula, Lin, Rel, VarId};
pub use layout::{build_layout, Bounds, Layout, LayoutError, Slot, VarInfo, VarKind, SCALE};
pub use lower::{lower_body, lower_rule, LowerError, Lowered};
pub use search::{solve, Model, SolveResult, SolverConfig};

/// Solve the layout's base formula together with `extras`.
pub fn solve_layout(layout: &Layout, extras: &[&Formula], cfg: &SolverConfig) -> SolveResult {
    let mut all: Vec<&Formula> = Vec::with_capacity(extras.len() + 1);
    all.push(&layout.base);
    all.extend_from_slice(extras);
    solve(&layout.domains(), &all, cfg)
}

/// SMT-LIB text for the base formula plus `extras`.
pub fn dump_smtlib(layout: &Layout, extras: &[&Formula]) -> String {
    let mut all: Vec<&Formula> = vec![&layout.base];
    all.extend_from_slice(extras);
    to_smtlib(&layout.names(), &layout.domains(), &all)
}
