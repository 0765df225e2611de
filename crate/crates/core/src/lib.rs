//! Desk-scale digital twin for signalized urban corridors.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod corridor;
pub mod error;
pub mod eval;
pub mod graph;
pub mod layers;
pub mod model;
pub mod oracle;

pub use error::{Error, Result};
