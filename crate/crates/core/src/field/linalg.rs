//! Small dense linear algebra over symmetric and antisymmetric matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::fields::MatrixField;
use crate::error::{Error, Result};

/// Symmetric part `(A + A^T) / 2`.
pub fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Frobenius inner product `tr(A B^T)`.
pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// `e_p (x) e_q - e_q (x) e_p`.
pub fn antisym_unit(n: usize, p: usize, q: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    m[(p, q)] = 1.0;
    m[(q, p)] = -1.0;
    m
}

/// Basis `{e_i (x) e_j - e_j (x) e_i}_{i<j}` of the antisymmetric matrices, lexicographic in `(i, j)`.
pub fn antisym_basis(n: usize) -> Vec<DMatrix<f64>> {
    upper_pairs(n).into_iter().map(|(p, q)| antisym_unit(n, p, q)).collect()
}

/// Index pairs `(p, q)` with `p < q`, lexicographic.
pub fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|p| (p + 1..n).map(move |q| (p, q))).collect()
}

pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Orthonormal basis of the symmetric `n x n` matrices under `tr(A B^T)`.
#[derive(Debug, Clone)]
pub struct SymBasis {
    n: usize,
    elems: Vec<DMatrix<f64>>,
    // det of the basis expressed in the canonical orthonormal basis (+1 or -1)
    orientation: f64,
}

impl SymBasis {
    /// `{e_i (x) e_i}` followed by `{(e_i (x) e_j + e_j (x) e_i)/sqrt 2}_{i<j}`.
    pub fn orthonormal(n: usize) -> SymBasis {
        let mut elems = Vec::with_capacity(sym_dim(n));
        for i in 0..n {
            let mut m = DMatrix::zeros(n, n);
            m[(i, i)] = 1.0;
            elems.push(m);
        }
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for (i, j) in upper_pairs(n) {
            let mut m = DMatrix::zeros(n, n);
            m[(i, j)] = r;
            m[(j, i)] = r;
            elems.push(m);
        }
        SymBasis {
            n,
            elems,
            orientation: 1.0,
        }
    }

    /// Any orthonormal family of `n(n+1)/2` symmetric matrices.
    pub fn from_matrices(n: usize, elems: Vec<DMatrix<f64>>) -> Result<SymBasis> {
        if elems.len() != sym_dim(n) {
            return Err(Error::Invalid(format!(
                "a basis of S_{n} needs {} elements, got {}",
                sym_dim(n),
                elems.len()
            )));
        }
        for e in &elems {
            if e.shape() != (n, n) || (e - e.transpose()).norm() > 1e-12 {
                return Err(Error::Invalid("basis elements must be symmetric n x n".into()));
            }
        }
        let canon = SymBasis::orthonormal(n);
        let change = DMatrix::from_fn(elems.len(), elems.len(), |k, l| frobenius(&elems[k], &canon.elems[l]));
        let gram = DMatrix::from_fn(elems.len(), elems.len(), |k, l| frobenius(&elems[k], &elems[l]));
        if (gram - DMatrix::identity(elems.len(), elems.len())).abs().max() > 1e-12 {
            return Err(Error::Invalid("basis is not orthonormal".into()));
        }
        Ok(SymBasis {
            n,
            elems,
            orientation: change.determinant().signum(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn elements(&self) -> &[DMatrix<f64>] {
        &self.elems
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.len();
        DMatrix::from_fn(k, k, |a, b| frobenius(&self.elems[a], &self.elems[b]))
    }

    pub fn coords(&self, m: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.elems.iter().map(|e| frobenius(m, e)))
    }

    pub fn from_coords(&self, c: &DVector<f64>) -> DMatrix<f64> {
        self.elems
            .iter()
            .zip(c.iter())
            .fold(DMatrix::zeros(self.n, self.n), |acc, (e, &w)| acc + e * w)
    }

    /// Generalized cross product of `n(n+1)/2 - 1` symmetric matrices.
    pub fn cross(&self, mats: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
        let coords: Vec<DVector<f64>> = mats.iter().map(|m| self.coords(m)).collect();
        let c = cross_product(&coords)?;
        Ok(self.from_coords(&(c * self.orientation)))
    }
}

/// Generalized cross product of `N-1` vectors in `R^N`.
///
/// Expands the formal determinant whose first `N-1` rows are the inputs and
/// whose last row holds the basis vectors; component `k` is the cofactor of
/// entry `(N-1, k)`.
pub fn cross_product(vectors: &[DVector<f64>]) -> Result<DVector<f64>> {
    let big_n = vectors.len() + 1;
    if big_n < 2 {
        return Err(Error::Invalid("cross product needs at least one vector".into()));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != big_n) {
        return Err(Error::Invalid(format!(
            "cross product in R^{big_n} needs {} vectors of length {big_n}, got length {}",
            big_n - 1,
            v.len()
        )));
    }
    let rows = big_n - 1;
    let mut out = DVector::zeros(big_n);
    if rows == 0 {
        return Ok(out);
    }
    // Evaluate on a canonical ordering of the inputs so that permuting them
    // changes only the sign, bit for bit.
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| {
        vectors[a]
            .iter()
            .zip(vectors[b].iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let parity = permutation_sign(&order);
    for k in 0..big_n {
        let minor = DMatrix::from_fn(rows, rows, |r, c| {
            let col = if c < k { c } else { c + 1 };
            vectors[order[r]][col]
        });
        let sign = if (rows + k).is_multiple_of(2) { 1.0 } else { -1.0 };
        out[k] = parity * sign * minor.determinant();
    }
    Ok(out)
}

fn permutation_sign(perm: &[usize]) -> f64 {
    let mut seen = vec![false; perm.len()];
    let mut sign = 1.0;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = perm[i];
            len += 1;
        }
        if len % 2 == 0 {
            sign = -sign;
        }
    }
    sign
}

/// Whether a cross product result signals linearly dependent inputs.
pub fn is_dependent(result: &DVector<f64>, inputs: &[DVector<f64>]) -> bool {
    let scale: f64 = inputs.iter().map(|v| v.norm()).product();
    result.norm() < 1e-9 * scale
}

/// Eigen-decomposition based square root and inverse square root of an SPD matrix.
pub fn spd_sqrt(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(sym(a));
    if let Some(&min) = eig.eigenvalues.iter().min_by(|x, y| x.total_cmp(y)) {
        if min <= 0.0 {
            return Err(Error::NotSpd {
                what: "matrix square root argument",
                node: 0,
                min_eig: min,
            });
        }
    }
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt)) * q.transpose();
    let inv_root = q * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt())) * q.transpose();
    Ok((root, inv_root))
}

pub fn eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(sym(a));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Result of [`spd_check`].
#[derive(Debug, Clone)]
pub struct SpdReport {
    pub kappa: f64,
    pub passes: Vec<bool>,
    pub min_eig: Vec<f64>,
    pub max_eig: Vec<f64>,
    /// Largest Frobenius norm of the antisymmetric part removed before the check.
    pub max_asymmetry: f64,
}

impl SpdReport {
    pub fn passed(&self) -> bool {
        self.passes.iter().all(|&p| p)
    }

    pub fn worst_min(&self) -> (usize, f64) {
        self.min_eig
            .iter()
            .cloned()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, f64::NAN))
    }

    pub fn worst_max(&self) -> (usize, f64) {
        self.max_eig
            .iter()
            .cloned()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, f64::NAN))
    }

    /// The smallest ellipticity constant compatible with every node.
    pub fn required_kappa(&self) -> f64 {
        let (_, lo) = self.worst_min();
        let (_, hi) = self.worst_max();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi.max(1.0 / lo).max(1.0)
        }
    }
}

/// Node-wise check of `kappa^-1 <= lambda_min <= lambda_max <= kappa`.
pub fn spd_check(m: &MatrixField, kappa: f64) -> SpdReport {
    let len = m.grid().len();
    let mut passes = Vec::with_capacity(len);
    let mut min_eig = Vec::with_capacity(len);
    let mut max_eig = Vec::with_capacity(len);
    let mut max_asymmetry: f64 = 0.0;
    let tol = 1e-12;
    for i in 0..len {
        let a = m.at(i);
        max_asymmetry = max_asymmetry.max((&a - a.transpose()).norm() * 0.5);
        let (lo, hi) = eigen_range(&a);
        passes.push(lo >= (1.0 / kappa) * (1.0 - tol) && hi <= kappa * (1.0 + tol));
        min_eig.push(lo);
        max_eig.push(hi);
    }
    SpdReport {
        kappa,
        passes,
        min_eig,
        max_eig,
        max_asymmetry,
    }
}
