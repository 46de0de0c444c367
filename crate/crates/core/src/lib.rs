//! Density-matrix simulation of reversible projective measurement on a
//! spin-7/2 nucleus with quadrupolar splitting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod optim;
pub mod prep;
pub mod sequence;
pub mod spin_ops;

pub use error::{Error, Result};
