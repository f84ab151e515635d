//! Reconstruction of anisotropic conductivity tensors from internal current
//! density measurements.
//!
//! The crate is organized bottom-up: [`field`] holds grids, discrete fields and
//! finite-difference operators; [`forward`] solves the conductivity equation
//! and synthesizes measurements; [`hypotheses`] builds the algebraic objects
//! the reconstructions rely on and checks their non-degeneracy;
//! [`recon`] recovers the anisotropic structure and the scalar factor
//! jointly; [`global`] recovers the full tensor through a coupled elliptic
//! system; [`cases`] provides closed-form test configurations.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cases;
pub mod conductivity;
pub mod error;
pub mod field;
pub mod forward;
pub mod global;
pub mod hypotheses;
pub mod recon;
pub mod sparse;

pub use conductivity::ConductivityField;
pub use error::{Error, Result, Stage};
