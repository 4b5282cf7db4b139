//! Intensity-modulated direct-detection channel simulation and
//! achievable-rate estimation for successive interference cancellation.

// Negated comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod auxmodel;
pub mod error;
pub mod fba;
pub mod gibbs;
pub mod link;
pub mod modem;
pub mod experiment;
pub mod numeric;
pub mod plotdata;
pub mod polar;
pub mod rates;
pub mod seed;

pub use error::{Error, Result};
