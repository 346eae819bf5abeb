//! Electrical impedance tomography with a complete-electrode-model forward
//! solver and an implicit-neural-representation inversion regularized by
//! total variation and by structural similarity to guidance images.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fem;
pub mod grid;
pub mod guidance;
pub mod inr;
mod linalg;
pub mod mesh;
pub mod metrics;
pub mod phantom;
pub mod recon;
pub mod regularizers;
pub mod sensitivity;
pub mod sparse;
pub mod study;

pub use error::{EitError, GuidanceError, Result};
