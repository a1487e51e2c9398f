//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every operation whose inputs require gradients; calling
//! [`Var::backward`] on a scalar loss walks the record in reverse and
//! accumulates `d(loss)/d(node)` into each node, summing across uses.
//!
//! Everything is double precision and single-threaded per tape. Shape
//! mismatches are programming errors and panic with a descriptive message;
//! data-dependent failures (non-finite losses, missing gradients) are
//! returned as [`AutodiffError`] values. There is no broadcasting beyond
//! bias-vector addition to the rows of a matrix.

mod adam;
mod tape;
mod tensor;

pub mod check;

pub use adam::Adam;
pub use tape::{AutodiffError, Tape, Var};
pub use tensor::Tensor;
