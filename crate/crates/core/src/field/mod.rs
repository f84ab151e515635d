//! Grids, discrete fields, finite-difference operators and small linear algebra.

mod fields;
mod grid;
pub mod linalg;
pub mod ops;

pub use fields::{wedge, MatrixField, ScalarField, TwoFormField, VectorField};
pub use grid::{Grid, Subdomain};
pub use linalg::{cross_product, spd_check, SpdReport, SymBasis};
pub use ops::{divergence, exterior_derivative, gradient, matrix_divergence, partial, vector_gradient};
