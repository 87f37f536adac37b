// Negated float comparisons (`!(x > 0.0)`) are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod attribution;
pub mod costs;
pub mod diffnet;
pub mod error;
pub mod eval;
pub mod filters;
pub mod image;
pub mod natias;
pub mod rng;
pub mod simulator;
pub mod synth;

pub use error::{Error, Result};
