use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::grid::{Grid, Subdomain};
use crate::error::{Error, Result};

fn check_len(grid: &Grid, per_node: usize, len: usize) -> Result<()> {
    if len != grid.len() * per_node {
        return Err(Error::Shape(format!(
            "expected {} values ({} nodes x {per_node}), got {len}",
            grid.len() * per_node,
            grid.len()
        )));
    }
    Ok(())
}

fn first_non_finite(data: &[f64], per_node: usize) -> Option<usize> {
    data.iter().position(|v| !v.is_finite()).map(|p| p / per_node)
}

fn restrict_data(grid: &Grid, sub: &Subdomain, per_node: usize, data: &[f64]) -> Vec<f64> {
    sub.nodes(grid)
        .into_iter()
        .flat_map(|i| data[i * per_node..(i + 1) * per_node].iter().copied())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        check_len(&grid, 1, data.len())?;
        Ok(ScalarField { grid, data })
    }

    pub fn zeros(grid: &Grid) -> Self {
        ScalarField {
            data: vec![0.0; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        ScalarField {
            data: vec![value; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let data = (0..grid.len()).into_par_iter().map(|i| f(&grid.point(i))).collect();
        ScalarField {
            grid: grid.clone(),
            data,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.data[idx]
    }

    pub fn set(&mut self, idx: usize, v: f64) {
        self.data[idx] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match first_non_finite(&self.data, 1) {
            Some(node) => Err(Error::NonFinite { what, node }),
            None => Ok(()),
        }
    }

    pub fn restrict(&self, sub: &Subdomain) -> Result<ScalarField> {
        let g = self.grid.subgrid(sub)?;
        ScalarField::new(g, restrict_data(&self.grid, sub, 1, &self.data))
    }

    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let st = self.grid.interpolation_stencil(x)?;
        Some(st.iter().map(|&(i, w)| w * self.data[i]).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute difference with another field on the same grid.
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    data: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        check_len(&grid, n, data.len())?;
        Ok(VectorField { grid, data })
    }

    pub fn zeros(grid: &Grid) -> Self {
        VectorField {
            data: vec![0.0; grid.len() * grid.dim()],
            grid: grid.clone(),
        }
    }

    pub fn constant(grid: &Grid, v: &[f64]) -> Self {
        assert_eq!(v.len(), grid.dim());
        VectorField {
            data: (0..grid.len()).flat_map(|_| v.iter().copied()).collect(),
            grid: grid.clone(),
        }
    }

    pub fn from_fn<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        let n = grid.dim();
        let data = (0..grid.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let v = f(&grid.point(i));
                assert_eq!(v.len(), n, "vector value has wrong length");
                v.into_iter()
            })
            .collect();
        VectorField {
            grid: grid.clone(),
            data,
        }
    }

    /// Node-wise map with access to the node index.
    pub fn from_nodes<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(usize) -> DVector<f64> + Sync,
    {
        let n = grid.dim();
        let data = (0..grid.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let v = f(i);
                assert_eq!(v.len(), n, "vector value has wrong length");
                v.iter().copied().collect::<Vec<_>>().into_iter()
            })
            .collect();
        VectorField {
            grid: grid.clone(),
            data,
        }
    }

    pub fn from_components(comps: &[ScalarField]) -> Result<Self> {
        let grid = comps
            .first()
            .ok_or_else(|| Error::Shape("no components".into()))?
            .grid()
            .clone();
        let n = grid.dim();
        if comps.len() != n || comps.iter().any(|c| c.grid() != &grid) {
            return Err(Error::Shape(format!(
                "need {n} components on a common grid, got {}",
                comps.len()
            )));
        }
        let mut data = vec![0.0; grid.len() * n];
        for (k, c) in comps.iter().enumerate() {
            for (i, v) in c.data().iter().enumerate() {
                data[i * n + k] = *v;
            }
        }
        Ok(VectorField { grid, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, idx: usize) -> &[f64] {
        let n = self.dim();
        &self.data[idx * n..(idx + 1) * n]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut [f64] {
        let n = self.dim();
        &mut self.data[idx * n..(idx + 1) * n]
    }

    pub fn vector(&self, idx: usize) -> DVector<f64> {
        DVector::from_column_slice(self.at(idx))
    }

    pub fn component(&self, k: usize) -> ScalarField {
        let n = self.dim();
        ScalarField {
            grid: self.grid.clone(),
            data: self.data.iter().skip(k).step_by(n).copied().collect(),
        }
    }

    pub fn components(&self) -> Vec<ScalarField> {
        (0..self.dim()).map(|k| self.component(k)).collect()
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match first_non_finite(&self.data, self.dim()) {
            Some(node) => Err(Error::NonFinite { what, node }),
            None => Ok(()),
        }
    }

    pub fn restrict(&self, sub: &Subdomain) -> Result<VectorField> {
        let g = self.grid.subgrid(sub)?;
        VectorField::new(g, restrict_data(&self.grid, sub, self.dim(), &self.data))
    }

    pub fn interpolate(&self, x: &[f64]) -> Option<Vec<f64>> {
        let st = self.grid.interpolation_stencil(x)?;
        let n = self.dim();
        let mut out = vec![0.0; n];
        for (i, w) in st {
            for (o, v) in out.iter_mut().zip(self.at(i)) {
                *o += w * v;
            }
        }
        Some(out)
    }

    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let n = self.dim();
        ScalarField {
            grid: self.grid.clone(),
            data: self
                .data
                .chunks(n)
                .zip(other.data.chunks(n))
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
                .collect(),
        }
    }

    pub fn scale(&self, s: &ScalarField) -> VectorField {
        let n = self.dim();
        let mut out = self.clone();
        for (chunk, f) in out.data.chunks_mut(n).zip(s.data()) {
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        out
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest Euclidean norm over the nodes.
    pub fn max_norm(&self) -> f64 {
        self.data
            .chunks(self.dim())
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Per-node `n x n` matrices, stored row-major within each node.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    grid: Grid,
    data: Vec<f64>,
}

impl MatrixField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        check_len(&grid, n * n, data.len())?;
        Ok(MatrixField { grid, data })
    }

    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.dim();
        MatrixField {
            data: vec![0.0; grid.len() * n * n],
            grid: grid.clone(),
        }
    }

    pub fn constant(grid: &Grid, m: &DMatrix<f64>) -> Self {
        MatrixField::from_nodes(grid, |_| m.clone())
    }

    pub fn identity(grid: &Grid) -> Self {
        let n = grid.dim();
        MatrixField::constant(grid, &DMatrix::identity(n, n))
    }

    pub fn from_fn<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64]) -> DMatrix<f64> + Sync,
    {
        MatrixField::from_nodes(grid, |i| f(&grid.point(i)))
    }

    pub fn from_nodes<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(usize) -> DMatrix<f64> + Sync,
    {
        let n = grid.dim();
        let data = (0..grid.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let m = f(i);
                assert_eq!(m.shape(), (n, n), "matrix value has wrong shape");
                row_major(&m).into_iter()
            })
            .collect();
        MatrixField {
            grid: grid.clone(),
            data,
        }
    }

    /// Matrix whose `j`-th column at each node is `cols[j]`.
    pub fn from_columns(cols: &[VectorField]) -> Result<Self> {
        let grid = cols
            .first()
            .ok_or_else(|| Error::Shape("no columns".into()))?
            .grid()
            .clone();
        let n = grid.dim();
        if cols.len() != n || cols.iter().any(|c| c.grid() != &grid) {
            return Err(Error::Shape(format!(
                "need {n} columns on a common grid, got {}",
                cols.len()
            )));
        }
        Ok(MatrixField::from_nodes(&grid, |i| {
            DMatrix::from_fn(n, n, |r, c| cols[c].at(i)[r])
        }))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn raw(&self, idx: usize) -> &[f64] {
        let nn = self.dim() * self.dim();
        &self.data[idx * nn..(idx + 1) * nn]
    }

    pub fn entry(&self, idx: usize, r: usize, c: usize) -> f64 {
        let n = self.dim();
        self.data[idx * n * n + r * n + c]
    }

    pub fn at(&self, idx: usize) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_row_slice(n, n, self.raw(idx))
    }

    pub fn set(&mut self, idx: usize, m: &DMatrix<f64>) {
        let n = self.dim();
        let nn = n * n;
        self.data[idx * nn..(idx + 1) * nn].copy_from_slice(&row_major(m));
    }

    /// Scalar field of entry `(r, c)`.
    pub fn entry_field(&self, r: usize, c: usize) -> ScalarField {
        let n = self.dim();
        ScalarField {
            grid: self.grid.clone(),
            data: self.data.iter().skip(r * n + c).step_by(n * n).copied().collect(),
        }
    }

    pub fn column(&self, c: usize) -> VectorField {
        let n = self.dim();
        VectorField {
            grid: self.grid.clone(),
            data: (0..self.grid.len())
                .flat_map(|i| (0..n).map(move |r| (i, r)))
                .map(|(i, r)| self.entry(i, r, c))
                .collect(),
        }
    }

    pub fn columns(&self) -> Vec<VectorField> {
        (0..self.dim()).map(|c| self.column(c)).collect()
    }

    pub fn map_nodes<F>(&self, f: F) -> MatrixField
    where
        F: Fn(usize, DMatrix<f64>) -> DMatrix<f64> + Sync,
    {
        MatrixField::from_nodes(&self.grid, |i| f(i, self.at(i)))
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match first_non_finite(&self.data, self.dim() * self.dim()) {
            Some(node) => Err(Error::NonFinite { what, node }),
            None => Ok(()),
        }
    }

    pub fn restrict(&self, sub: &Subdomain) -> Result<MatrixField> {
        let g = self.grid.subgrid(sub)?;
        let nn = self.dim() * self.dim();
        MatrixField::new(g, restrict_data(&self.grid, sub, nn, &self.data))
    }

    pub fn interpolate(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let st = self.grid.interpolation_stencil(x)?;
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (i, w) in st {
            out += self.at(i) * w;
        }
        Some(out)
    }

    /// Node-wise matrix-vector product.
    pub fn apply(&self, v: &VectorField) -> VectorField {
        VectorField::from_nodes(&self.grid, |i| self.at(i) * v.vector(i))
    }

    pub fn symmetrized(&self) -> MatrixField {
        self.map_nodes(|_, m| super::linalg::sym(&m))
    }

    /// Largest Frobenius norm of the antisymmetric part.
    pub fn max_asymmetry(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let m = self.at(i);
                (&m - m.transpose()).norm() * 0.5
            })
            .fold(0.0, f64::max)
    }

    /// Largest node-wise Frobenius distance to another field.
    pub fn max_diff(&self, other: &MatrixField) -> f64 {
        (0..self.grid.len())
            .map(|i| (self.at(i) - other.at(i)).norm())
            .fold(0.0, f64::max)
    }

    /// Discrete L2 norm of the node-wise Frobenius difference.
    pub fn l2_diff(&self, other: &MatrixField) -> f64 {
        let s: f64 = (0..self.grid.len())
            .map(|i| (self.at(i) - other.at(i)).norm_squared())
            .sum();
        (s * self.grid.cell_volume()).sqrt()
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r).flat_map(|i| (0..c).map(move |j| m[(i, j)])).collect()
}

/// Two-vector field `sum_{i<j} c_ij e_i ^ e_j`, stored as a full antisymmetric matrix per node.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoFormField {
    grid: Grid,
    data: Vec<f64>,
}

impl TwoFormField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        let n = grid.dim();
        check_len(&grid, n * n, data.len())?;
        let tf = TwoFormField { grid, data };
        for i in 0..tf.grid.len() {
            for a in 0..n {
                for b in 0..n {
                    let (x, y) = (tf.coeff(i, a, b), tf.coeff(i, b, a));
                    if (x + y).abs() > 1e-12 * (1.0 + x.abs()) {
                        return Err(Error::Invalid(format!("two-form not antisymmetric at node {i}")));
                    }
                }
            }
        }
        Ok(tf)
    }

    /// Build from the `i<j` coefficients produced by `f(node, i, j)`.
    pub(crate) fn from_upper<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(usize, usize, usize) -> f64 + Sync,
    {
        let n = grid.dim();
        let data = (0..grid.len())
            .into_par_iter()
            .flat_map_iter(|node| {
                let mut m = vec![0.0; n * n];
                for i in 0..n {
                    for j in i + 1..n {
                        let c = f(node, i, j);
                        m[i * n + j] = c;
                        m[j * n + i] = -c;
                    }
                }
                m.into_iter()
            })
            .collect();
        TwoFormField {
            grid: grid.clone(),
            data,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn coeff(&self, idx: usize, i: usize, j: usize) -> f64 {
        let n = self.grid.dim();
        self.data[idx * n * n + i * n + j]
    }

    pub fn at(&self, idx: usize) -> DMatrix<f64> {
        let n = self.grid.dim();
        DMatrix::from_row_slice(n, n, &self.data[idx * n * n..(idx + 1) * n * n])
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sub(&self, other: &TwoFormField) -> TwoFormField {
        TwoFormField {
            grid: self.grid.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &TwoFormField) -> TwoFormField {
        TwoFormField {
            grid: self.grid.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scale(&self, s: &ScalarField) -> TwoFormField {
        let nn = self.grid.dim() * self.grid.dim();
        let mut out = self.clone();
        for (chunk, f) in out.data.chunks_mut(nn).zip(s.data()) {
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        out
    }

    /// The vector field `w(A, .)`.
    pub fn contract(&self, a: &VectorField) -> VectorField {
        let n = self.grid.dim();
        VectorField::from_nodes(&self.grid, |i| {
            let av = a.at(i);
            DVector::from_fn(n, |k, _| (0..n).map(|r| av[r] * self.coeff(i, r, k)).sum())
        })
    }

    /// The scalar field `w(A, B)`.
    pub fn evaluate(&self, a: &VectorField, b: &VectorField) -> ScalarField {
        let n = self.grid.dim();
        let data = (0..self.grid.len())
            .map(|i| {
                let (av, bv) = (a.at(i), b.at(i));
                let mut s = 0.0;
                for r in 0..n {
                    for c in 0..n {
                        s += av[r] * self.coeff(i, r, c) * bv[c];
                    }
                }
                s
            })
            .collect();
        ScalarField {
            grid: self.grid.clone(),
            data,
        }
    }
}

/// Pointwise `A ^ B` with coefficients `A_i B_j - A_j B_i`.
pub fn wedge(a: &VectorField, b: &VectorField) -> TwoFormField {
    TwoFormField::from_upper(a.grid(), |node, i, j| {
        let (x, y) = (a.at(node), b.at(node));
        x[i] * y[j] - x[j] * y[i]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::uniform(2, 4, 0.0, 1.0).unwrap()
    }

    #[test]
    fn columns_round_trip() {
        let g = grid();
        let a = VectorField::from_fn(&g, |x| vec![x[0], 2.0 * x[1]]);
        let b = VectorField::from_fn(&g, |x| vec![x[0] * x[1], -1.0]);
        let m = MatrixField::from_columns(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.column(0), a);
        assert_eq!(m.column(1), b);
        assert_eq!(m.entry_field(0, 1), b.component(0));
    }

    #[test]
    fn component_round_trip() {
        let g = grid();
        let v = VectorField::from_fn(&g, |x| vec![x[0].sin(), x[1].cos()]);
        let back = VectorField::from_components(&v.components()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn wrong_lengths_are_rejected() {
        let g = grid();
        assert!(ScalarField::new(g.clone(), vec![0.0; 3]).is_err());
        assert!(VectorField::new(g.clone(), vec![0.0; 16]).is_err());
        assert!(MatrixField::new(g, vec![0.0; 16]).is_err());
    }

    #[test]
    fn two_form_definitions() {
        let g = grid();
        let e1 = VectorField::constant(&g, &[1.0, 0.0]);
        let e2 = VectorField::constant(&g, &[0.0, 1.0]);
        let w = wedge(&e1, &e2);
        assert!(w.evaluate(&e1, &e2).data().iter().all(|&v| v == 1.0));
        assert_eq!(w.contract(&e1), e2);
        let a = VectorField::from_fn(&g, |x| vec![x[0] + 0.3, x[1] * x[0] - 2.0]);
        let arbitrary = wedge(&a, &VectorField::from_fn(&g, |x| vec![x[1].exp(), x[0]]));
        assert!(arbitrary.evaluate(&a, &a).max_abs() < 1e-14);
    }

    #[test]
    fn two_form_rejects_symmetric_data() {
        let g = grid();
        assert!(TwoFormField::new(g.clone(), vec![1.0; g.len() * 4]).is_err());
    }
}
