//! Finite-difference differential operators on structured grids.
//!
//! All derivatives use the same one-dimensional stencil along each axis:
//! second-order central differences at interior nodes and second-order
//! one-sided differences (`(-3f0 + 4f1 - f2) / 2h`) on the two end nodes.
//! Because the per-axis operators commute, `d(grad f)` vanishes to rounding
//! for any sampled `f`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::fields::{MatrixField, ScalarField, TwoFormField, VectorField};
use super::grid::Grid;
use crate::error::{Error, Result};

/// Derivative along `axis` of raw node data with `stride` values per node at offset `comp`.
fn diff_raw(grid: &Grid, data: &[f64], per_node: usize, comp: usize, axis: usize) -> Vec<f64> {
    let s = grid.stride(axis);
    let last = grid.dims()[axis] - 1;
    let h = grid.spacing()[axis];
    let at = |i: usize| data[i * per_node + comp];
    (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.coord(i, axis);
            if c == 0 {
                (-3.0 * at(i) + 4.0 * at(i + s) - at(i + 2 * s)) / (2.0 * h)
            } else if c == last {
                (3.0 * at(i) - 4.0 * at(i - s) + at(i - 2 * s)) / (2.0 * h)
            } else {
                (at(i + s) - at(i - s)) / (2.0 * h)
            }
        })
        .collect()
}

/// Partial derivative of a scalar field along one axis.
pub fn partial(f: &ScalarField, axis: usize) -> ScalarField {
    let d = diff_raw(f.grid(), f.data(), 1, 0, axis);
    ScalarField::new(f.grid().clone(), d).expect("length preserved")
}

pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid();
    let parts: Vec<ScalarField> = (0..g.dim()).map(|a| partial(f, a)).collect();
    VectorField::from_components(&parts).expect("components share the grid")
}

/// Matrix field `G` with `G[a][k] = d_a V^k`: column `k` is the gradient of the `k`-th component.
pub fn vector_gradient(v: &VectorField) -> MatrixField {
    let g = v.grid();
    let n = g.dim();
    let parts: Vec<Vec<f64>> = (0..n * n)
        .map(|ak| diff_raw(g, v.data(), n, ak % n, ak / n))
        .collect();
    MatrixField::from_nodes(g, |i| DMatrix::from_fn(n, n, |a, k| parts[a * n + k][i]))
}

/// Exterior derivative `dV = sum_{i<j} (d_i V^j - d_j V^i) e_i ^ e_j`.
pub fn exterior_derivative(v: &VectorField) -> TwoFormField {
    let grad = vector_gradient(v);
    TwoFormField::from_upper(v.grid(), |node, i, j| grad.entry(node, i, j) - grad.entry(node, j, i))
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid();
    let n = g.dim();
    let mut out = vec![0.0; g.len()];
    for a in 0..n {
        let d = diff_raw(g, v.data(), n, a, a);
        out.iter_mut().zip(d).for_each(|(o, x)| *o += x);
    }
    ScalarField::new(g.clone(), out).expect("length preserved")
}

/// Row-wise divergence `(div S)_b = sum_a d_a S_ab`.
pub fn matrix_divergence(m: &MatrixField) -> VectorField {
    let g = m.grid();
    let n = g.dim();
    let mut out = vec![0.0; g.len() * n];
    for b in 0..n {
        for a in 0..n {
            let d = diff_raw(g, m.data(), n * n, a * n + b, a);
            for (i, x) in d.into_iter().enumerate() {
                out[i * n + b] += x;
            }
        }
    }
    VectorField::new(g.clone(), out).expect("length preserved")
}

/// Directional derivative `(X . grad) Y`.
pub fn directional_derivative(x: &VectorField, y: &VectorField) -> Result<VectorField> {
    if x.grid() != y.grid() {
        return Err(Error::Shape("vector fields live on different grids".into()));
    }
    let gy = vector_gradient(y);
    let n = x.dim();
    Ok(VectorField::from_nodes(x.grid(), |i| {
        let xv = x.at(i);
        nalgebra::DVector::from_fn(n, |k, _| (0..n).map(|a| xv[a] * gy.entry(i, a, k)).sum())
    }))
}

pub fn check_same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a != b {
        return Err(Error::Shape("fields live on different grids".into()));
    }
    Ok(())
}
