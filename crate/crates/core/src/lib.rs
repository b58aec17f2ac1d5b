//! Numerical laboratory for the first nonzero eigenvalue of the weighted
//! p-Laplacian along a Ricci-Bourguignon flow coupled with heat flow of the
//! weight.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fields;
pub mod flow;
pub mod monotone;
pub mod scenario;
pub mod spectral;
pub mod variation;

pub use error::{Error, Result};
pub use fields::{ScalarField, TorusGeometry};
pub use flow::{FlowParams};
