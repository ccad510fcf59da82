//! Floquet analysis of the second moments of a levitated particle in a
//! periodically modulated harmonic trap, with and without the
//! Schrödinger-Newton self-gravity term.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod firstmoments;
pub mod floquet;
pub mod greens;
pub mod linalg;
pub mod oracle;
pub mod output;
pub mod params;
pub mod propagator;

pub use error::{Error, Result};
