use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::field::{spd_check, MatrixField, ScalarField};

/// Relative antisymmetric part tolerated before a tensor is rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-10;

/// Symmetric positive-definite conductivity `gamma = beta * gamma_tilde` with `det gamma_tilde = 1`.
#[derive(Debug, Clone)]
pub struct ConductivityField {
    gamma: MatrixField,
    beta: ScalarField,
    gamma_tilde: MatrixField,
    kappa: f64,
}

impl ConductivityField {
    /// Validate `gamma` and derive its decomposition; `kappa` is the tightest ellipticity bound.
    pub fn new(gamma: MatrixField) -> Result<Self> {
        gamma.check_finite("conductivity")?;
        let scale = gamma.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let asym = gamma.max_asymmetry();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Invalid(format!("conductivity is not symmetric (antisymmetric part {asym:e})")));
        }
        let gamma = gamma.symmetrized();
        let report = spd_check(&gamma, f64::INFINITY);
        let (node, min_eig) = report.worst_min();
        if min_eig <= 0.0 {
            return Err(Error::NotSpd {
                what: "conductivity",
                node,
                min_eig,
            });
        }
        let kappa = report.required_kappa();
        let n = gamma.dim() as f64;
        let beta = ScalarField::new(
            gamma.grid().clone(),
            (0..gamma.grid().len()).map(|i| gamma.at(i).determinant().powf(1.0 / n)).collect(),
        )?;
        let gamma_tilde = gamma.map_nodes(|i, m| m / beta.get(i));
        Ok(ConductivityField {
            gamma,
            beta,
            gamma_tilde,
            kappa,
        })
    }

    /// Like [`ConductivityField::new`] but fails unless `kappa^-1 <= eig <= kappa` everywhere.
    pub fn with_bound(gamma: MatrixField, kappa: f64) -> Result<Self> {
        let mut c = ConductivityField::new(gamma)?;
        let report = spd_check(&c.gamma, kappa);
        if !report.passed() {
            let (node, min_eig) = report.worst_min();
            return Err(Error::NotSpd {
                what: "conductivity within the ellipticity bound",
                node,
                min_eig,
            });
        }
        c.kappa = kappa;
        Ok(c)
    }

    pub fn from_parts(beta: &ScalarField, gamma_tilde: &MatrixField) -> Result<Self> {
        ConductivityField::new(gamma_tilde.map_nodes(|i, m| m * beta.get(i)))
    }

    pub fn isotropic(beta: &ScalarField) -> Result<Self> {
        let n = beta.grid().dim();
        ConductivityField::new(MatrixField::from_nodes(beta.grid(), |i| {
            DMatrix::identity(n, n) * beta.get(i)
        }))
    }

    pub fn constant(grid: &crate::field::Grid, m: &DMatrix<f64>) -> Result<Self> {
        ConductivityField::new(MatrixField::constant(grid, m))
    }

    pub fn gamma(&self) -> &MatrixField {
        &self.gamma
    }

    pub fn beta(&self) -> &ScalarField {
        &self.beta
    }

    pub fn gamma_tilde(&self) -> &MatrixField {
        &self.gamma_tilde
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn inverse(&self) -> MatrixField {
        self.gamma.map_nodes(|_, m| m.try_inverse().expect("SPD matrices are invertible"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;

    #[test]
    fn decomposition_has_unit_determinant() {
        let g = Grid::uniform(2, 4, 0.0, 1.0).unwrap();
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = ConductivityField::constant(&g, &m).unwrap();
        let beta = 1.75f64.sqrt();
        assert!((c.beta().get(0) - beta).abs() < 1e-14);
        assert!((c.gamma_tilde().at(3).determinant() - 1.0).abs() < 1e-14);
        assert!(c.kappa() >= 1.0);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let g = Grid::uniform(2, 3, 0.0, 1.0).unwrap();
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(ConductivityField::constant(&g, &bad), Err(Error::NotSpd { .. })));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
        assert!(ConductivityField::constant(&g, &asym).is_err());
    }

    #[test]
    fn bound_is_enforced() {
        let g = Grid::uniform(2, 3, 0.0, 1.0).unwrap();
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]));
        assert!(ConductivityField::with_bound(MatrixField::constant(&g, &m), 2.0).is_err());
        assert!(ConductivityField::with_bound(MatrixField::constant(&g, &m), 4.0).is_ok());
    }
}
