//! Quantum and classical Fisher-information limits for jointly localizing
//! and resolving a pair of incoherent point sources in three dimensions.

// `!(x > 0.0)` is used on purpose to reject NaN; index loops mirror the
// component notation of the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aperture;
pub mod channels;
pub mod cli;
pub mod error;
pub mod montecarlo;
pub mod overlap;
pub mod qfi;

pub use error::{Error, Result};
