pub mod dsl;
pub mod value;
pub mod eval;
pub mod solver;
pub mod exec;
pub mod concretize;
pub mod par;
pub mod learn;
pub mod gen;
pub mod fuzz;
pub mod sources;
pub mod score;
