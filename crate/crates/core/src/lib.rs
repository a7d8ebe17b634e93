//! Numerical toolkit for the parabolic visual quasimetric `D_A` on the ideal
//! boundary of the solvable group `R^n x|_A R`.
//!
//! * [`linalg`]: the generator matrix type and `e^{tA}`.
//! * [`spectral`]: real-part Jordan forms and the quasiisometry test.
//! * [`metric`]: evaluation of `D_A` and its fiber identities.
//! * [`variation`]: Q-variation packing experiments.
//! * [`maps`]: explicit boundary maps, their biLipschitz bounds and
//!   empirical distortion.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod format;
pub mod linalg;
pub mod maps;
pub mod metric;
pub mod sampling;
pub mod spectral;
pub mod variation;

pub use error::{Error, Result};
pub use linalg::Matrix;
