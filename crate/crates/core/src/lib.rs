//! Autoencoding probabilistic circuits.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod bench;
pub mod builders;
pub mod circuit;
pub mod data;
pub mod error;
pub mod eval;
pub mod inference;
pub mod io;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Circuit64 = circuit::Circuit<f64>;
pub type Circuit32 = circuit::Circuit<f32>;
pub type Apc64 = model::Apc<f64>;
pub type Apc32 = model::Apc<f32>;
pub type Vae64 = nn::Vae<f64>;
pub type Vae32 = nn::Vae<f32>;
pub type Tape64 = autodiff::Tape<f64>;

#[cfg(test)]
extern crate self as apc_core;

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
pub(crate) mod oracle;

#[cfg(test)]
#[path = "../tests/common/gradcheck.rs"]
pub(crate) mod gradcheck;
