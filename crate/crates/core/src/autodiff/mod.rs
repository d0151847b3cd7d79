//! Tape-based reverse-mode differentiation.

mod graph;
mod ops;

pub use graph::{Gradients, Graph, Var};
