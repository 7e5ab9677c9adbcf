//! Reverse-mode automatic differentiation over dense matrices and
//! fixed-sparsity adjacency products.

pub mod gradcheck;
mod sparse;
mod tape;

pub use sparse::{EdgeIndex, SparseAdj};
pub use tape::{Tape, Var};
