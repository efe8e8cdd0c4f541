//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tape`] records every operation of one forward pass. Broadcasting is
//! restricted to scalar-vs-array and equal shapes; anything else must be made
//! explicit with [`Var::broadcast_to`] or [`Var::reshape`].

mod array;
mod conv;
mod tape;

pub use array::Array;
pub use tape::{concat, CustomOp, ReduceKind, Tape, Var};
