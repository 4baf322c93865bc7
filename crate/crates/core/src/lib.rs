//! Pseudo-spectral solvers for a Beris-Edwards system of active nematic flow on the
//! periodic square, together with its pointwise bulk dynamics, a Trotter splitting of the
//! inviscid limit, the limiting Euler plus Q-transport system and defect diagnostics.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beris;
pub mod bulk_ode;
pub mod defects;
pub mod diag;
pub mod error;
pub mod flows;
pub mod init;
pub mod limit;
pub mod qtensor;
pub mod rates;
pub mod snapshot;
pub mod spectral;
pub mod trotter;

pub use error::{Error, Result};
pub use qtensor::{Params, QTensor};
