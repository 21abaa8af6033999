//! Profile-perturbed cusp metrics on ping-pong Fuchsian groups: block coding,
//! transfer operators, critical exponents and orbit counting.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod cli;
pub mod coder;
pub mod countlab;
pub mod cusp;
pub mod error;
pub mod hypcore;
pub mod metric;
pub mod numerics;
pub mod plot;
pub mod transfer;

pub use error::{Error, Result};
