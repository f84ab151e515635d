use crate::error::{Error, Result};

/// Structured rectangular lattice in 2 or 3 dimensions.
///
/// Nodes are numbered row-major with the last axis fastest:
/// `index = (i0 * d1 + i1) * d2 + i2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: Vec<usize>,
    origin: Vec<f64>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(dims: Vec<usize>, origin: Vec<f64>, spacing: Vec<f64>) -> Result<Grid> {
        let n = dims.len();
        if !(n == 2 || n == 3) {
            return Err(Error::Invalid(format!("grid dimension must be 2 or 3, got {n}")));
        }
        if origin.len() != n || spacing.len() != n {
            return Err(Error::Shape(format!(
                "grid with {n} axes given {} origin and {} spacing entries",
                origin.len(),
                spacing.len()
            )));
        }
        if let Some(d) = dims.iter().find(|&&d| d < 3) {
            return Err(Error::Invalid(format!("need at least 3 nodes per axis, got {d}")));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Invalid("grid spacing must be positive".into()));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Invalid("grid origin must be finite".into()));
        }
        let mut strides = vec![1; n];
        for a in (0..n - 1).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        Ok(Grid {
            dims,
            origin,
            spacing,
            strides,
        })
    }

    /// `nodes` per axis covering the box `[lo, hi]^n`.
    pub fn uniform(n: usize, nodes: usize, lo: f64, hi: f64) -> Result<Grid> {
        if nodes < 2 {
            return Err(Error::Invalid("need at least 3 nodes per axis".into()));
        }
        let h = (hi - lo) / (nodes - 1) as f64;
        Grid::new(vec![nodes; n], vec![lo; n], vec![h; n])
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Volume of one cell, used as the quadrature weight of discrete L2 norms.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in 0..self.dim() {
            out[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        out
    }

    /// Position of the node along `axis`.
    pub fn coord(&self, idx: usize, axis: usize) -> usize {
        (idx / self.strides[axis]) % self.dims[axis]
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|a| self.origin[a] + self.coord(idx, a) as f64 * self.spacing[a])
            .collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|a| self.origin[a] + (self.dims[a] - 1) as f64 * self.spacing[a])
            .collect()
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        (0..self.dim()).any(|a| {
            let c = self.coord(idx, a);
            c == 0 || c + 1 == self.dims[a]
        })
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_boundary(i)).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Node closest to the point `x`, clamped to the grid.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let multi: Vec<usize> = (0..self.dim())
            .map(|a| {
                let t = ((x[a] - self.origin[a]) / self.spacing[a]).round();
                t.clamp(0.0, (self.dims[a] - 1) as f64) as usize
            })
            .collect();
        self.index(&multi)
    }

    /// Whether `x` lies inside the closed bounding box, with a relative slack of `1e-12`.
    pub fn contains(&self, x: &[f64]) -> bool {
        let up = self.upper();
        (0..self.dim()).all(|a| {
            let slack = 1e-12 * self.spacing[a];
            x[a] >= self.origin[a] - slack && x[a] <= up[a] + slack
        })
    }

    /// Sub-lattice spanned by the inclusive index box.
    pub fn subgrid(&self, sub: &Subdomain) -> Result<Grid> {
        sub.validate(self)?;
        let dims = (0..self.dim()).map(|a| sub.hi[a] - sub.lo[a] + 1).collect();
        let origin = (0..self.dim())
            .map(|a| self.origin[a] + sub.lo[a] as f64 * self.spacing[a])
            .collect();
        Grid::new(dims, origin, self.spacing.clone())
    }

    /// Multilinear interpolation weights for the point `x`: (node, weight) pairs.
    pub fn interpolation_stencil(&self, x: &[f64]) -> Option<Vec<(usize, f64)>> {
        if !self.contains(x) {
            return None;
        }
        let n = self.dim();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for a in 0..n {
            let t = ((x[a] - self.origin[a]) / self.spacing[a]).clamp(0.0, (self.dims[a] - 1) as f64);
            let i = (t.floor() as usize).min(self.dims[a] - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut out = Vec::with_capacity(1 << n);
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = 0;
            for a in 0..n {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx += (base[a] + bit) * self.strides[a];
            }
            out.push((idx, w));
        }
        Some(out)
    }
}

/// Axis-aligned inclusive box of node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subdomain {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl Subdomain {
    pub fn full(grid: &Grid) -> Subdomain {
        Subdomain {
            lo: vec![0; grid.dim()],
            hi: grid.dims().iter().map(|d| d - 1).collect(),
        }
    }

    /// The whole grid with `layers` boundary layers removed.
    pub fn shrunk(grid: &Grid, layers: usize) -> Subdomain {
        Subdomain {
            lo: vec![layers; grid.dim()],
            hi: grid.dims().iter().map(|d| d - 1 - layers).collect(),
        }
    }

    /// Default subdomain for infima: one boundary layer removed.
    pub fn interior(grid: &Grid) -> Subdomain {
        Subdomain::shrunk(grid, 1)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.lo.len() != grid.dim() || self.hi.len() != grid.dim() {
            return Err(Error::Shape("subdomain dimension differs from grid".into()));
        }
        for a in 0..grid.dim() {
            if self.hi[a] >= grid.dims()[a] || self.lo[a] + 2 > self.hi[a] {
                return Err(Error::Invalid(format!(
                    "subdomain [{}, {}] on axis {a} invalid for {} nodes (need >= 3 nodes)",
                    self.lo[a],
                    self.hi[a],
                    grid.dims()[a]
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, grid: &Grid, idx: usize) -> bool {
        (0..grid.dim()).all(|a| {
            let c = grid.coord(idx, a);
            c >= self.lo[a] && c <= self.hi[a]
        })
    }

    pub fn nodes(&self, grid: &Grid) -> Vec<usize> {
        (0..grid.len()).filter(|&i| self.contains(grid, i)).collect()
    }

    /// Map a full-grid node to its index inside [`Grid::subgrid`].
    pub fn local_index(&self, grid: &Grid, sub: &Grid, idx: usize) -> Option<usize> {
        if !self.contains(grid, idx) {
            return None;
        }
        let multi: Vec<usize> = (0..grid.dim()).map(|a| grid.coord(idx, a) - self.lo[a]).collect();
        Some(sub.index(&multi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_last_axis_fastest() {
        let g = Grid::new(vec![3, 4, 5], vec![0.0; 3], vec![1.0; 3]).unwrap();
        assert_eq!(g.len(), 60);
        assert_eq!(g.index(&[0, 0, 1]), 1);
        assert_eq!(g.index(&[0, 1, 0]), 5);
        assert_eq!(g.index(&[1, 0, 0]), 20);
        assert_eq!(g.multi_index(27), vec![1, 1, 2]);
        assert_eq!(g.point(27), vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(vec![2, 5], vec![0.0; 2], vec![0.1; 2]).is_err());
        assert!(Grid::new(vec![5, 5], vec![0.0; 2], vec![0.0, 0.1]).is_err());
        assert!(Grid::new(vec![5], vec![0.0], vec![0.1]).is_err());
        assert!(Grid::new(vec![5, 5, 5, 5], vec![0.0; 4], vec![0.1; 4]).is_err());
    }

    #[test]
    fn boundary_count() {
        let g = Grid::uniform(2, 5, 0.0, 1.0).unwrap();
        assert_eq!(g.boundary_nodes().len(), 16);
        assert_eq!(g.interior_nodes().len(), 9);
    }

    #[test]
    fn interpolation_weights_reproduce_affine() {
        let g = Grid::uniform(2, 6, -1.0, 1.0).unwrap();
        let x = [0.13, -0.71];
        let st = g.interpolation_stencil(&x).unwrap();
        let wsum: f64 = st.iter().map(|(_, w)| w).sum();
        assert!((wsum - 1.0).abs() < 1e-14);
        let val: f64 = st
            .iter()
            .map(|&(i, w)| {
                let p = g.point(i);
                w * (2.0 * p[0] - 3.0 * p[1] + 1.0)
            })
            .sum();
        assert!((val - (2.0 * 0.13 + 3.0 * 0.71 + 1.0)).abs() < 1e-13);
        assert!(g.interpolation_stencil(&[1.5, 0.0]).is_none());
    }

    #[test]
    fn subgrid_indices() {
        let g = Grid::uniform(2, 7, 0.0, 1.0).unwrap();
        let sub = Subdomain::interior(&g);
        let sg = g.subgrid(&sub).unwrap();
        assert_eq!(sg.dims(), &[5, 5]);
        let idx = g.index(&[1, 1]);
        assert_eq!(sub.local_index(&g, &sg, idx), Some(0));
        assert_eq!(sg.point(0), g.point(idx));
    }
}
