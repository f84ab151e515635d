//! Reconstruction through the strongly coupled elliptic system
//! `-div(S grad u_j) + sum_i W_ij . grad u_i = 0` and `gamma = H [grad U]^{-1}`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::conductivity::ConductivityField;
use crate::error::{Error, Result, Stage};
use crate::field::linalg::upper_pairs;
use crate::field::{gradient, matrix_divergence, spd_check, vector_gradient, MatrixField, ScalarField, Subdomain, VectorField};
use crate::forward::{conservative_stencil, solve_system, BoundaryCondition, MeasurementSet, SolverConfig, Unknowns};
use crate::hypotheses::{build_z, decomposition_coefficients, dual_frame, s_from_dual, DET_THRESHOLD};
use crate::recon::{curl_gamma_inverse, CurlResult};
use crate::sparse::{CsrMatrix, SolveStats};

/// `[X, Y] = (X . grad) Y - (Y . grad) X`.
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField> {
    if x.grid() != y.grid() {
        return Err(Error::Shape("vector fields live on different grids".into()));
    }
    let gx = vector_gradient(x);
    let gy = vector_gradient(y);
    let n = x.dim();
    Ok(VectorField::from_nodes(x.grid(), |i| {
        let (xv, yv) = (x.at(i), y.at(i));
        DVector::from_fn(n, |k, _| (0..n).map(|a| xv[a] * gy.entry(i, a, k) - yv[a] * gx.entry(i, a, k)).sum())
    }))
}

/// Coefficients of the coupled system.
///
/// `v[pair][i][j]` and `vt[pair][i][j]` follow the ordering of `pairs`.
#[derive(Debug, Clone)]
pub struct CoefficientBundle {
    pub n: usize,
    pub pairs: Vec<(usize, usize)>,
    pub v: Vec<Vec<Vec<VectorField>>>,
    pub vt: Vec<Vec<Vec<VectorField>>>,
    pub s: MatrixField,
    /// `w[i][j]`, the field multiplying `grad u_i` in equation `j`.
    pub w: Vec<Vec<VectorField>>,
    pub omega1_weights: Vec<ScalarField>,
    pub omega2_weights: Vec<ScalarField>,
}

/// `v_ij^pq = delta_ij sum_l (Z1_pl d_q X_l - Z1_ql d_p X_l) + [X_j, Z1_pi e_q - Z1_qi e_p]`
/// for the frame `X` (columns of `Z_2^{-T}` for `v`, of `H` for `vt`).
fn frame_terms(z1: &MatrixField, frame: &MatrixField) -> Result<Vec<Vec<Vec<VectorField>>>> {
    let grid = z1.grid();
    let n = z1.dim();
    let cols = frame.columns();
    let grads: Vec<MatrixField> = cols.iter().map(vector_gradient).collect();
    upper_pairs(n)
        .into_iter()
        .map(|(p, q)| {
            let diag = VectorField::from_nodes(grid, |x| {
                DVector::from_fn(n, |k, _| {
                    (0..n)
                        .map(|l| z1.entry(x, p, l) * grads[l].entry(x, q, k) - z1.entry(x, q, l) * grads[l].entry(x, p, k))
                        .sum()
                })
            });
            (0..n)
                .map(|i| {
                    let y = VectorField::from_nodes(grid, |x| {
                        let mut v = DVector::zeros(n);
                        v[q] = z1.entry(x, p, i);
                        v[p] = -z1.entry(x, q, i);
                        v
                    });
                    (0..n)
                        .map(|j| {
                            let b = lie_bracket(&cols[j], &y)?;
                            Ok(if i == j { b.add(&diag) } else { b })
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Build `v`, `vt`, `S` and `W_ij = delta_ij div S - sum_{p<q} (Omega1_pq v_ij^pq + Omega2_pq vt_ij^pq)`
/// from the first `n + 2` currents.
pub fn coefficient_fields(m: &MeasurementSet, omega1: &MatrixField, omega2: &MatrixField, det_threshold: f64) -> Result<CoefficientBundle> {
    let n = m.dim();
    if m.len() < n + 2 {
        return Err(Error::InsufficientSolutions { needed: n + 2, got: m.len() });
    }
    if omega1.grid() != m.grid() || omega2.grid() != m.grid() {
        return Err(Error::Shape("weight fields and currents live on different grids".into()));
    }
    for om in [omega1, omega2] {
        om.check_finite("weight field")?;
        let skew = (0..om.grid().len()).all(|i| {
            let a = om.at(i);
            (&a + a.transpose()).abs().max() <= 1e-12 * a.abs().max().max(1.0)
        });
        if !skew {
            return Err(Error::Invalid("weight fields must be antisymmetric".into()));
        }
    }
    let m = m.select(&(0..n + 2).collect::<Vec<_>>())?;
    let coeffs = decomposition_coefficients(&m, None, det_threshold)?;
    let z = build_z(&coeffs);
    let h = m.h_matrix();
    let zstar = dual_frame(&z[1], None, det_threshold, "Z_2")?;
    let v = frame_terms(&z[0], &zstar)?;
    let vt = frame_terms(&z[0], &h)?;
    let s = s_from_dual(&z[0], &zstar, &h, omega1, omega2);
    let div_s = matrix_divergence(&s);
    let pairs = upper_pairs(n);
    let omega1_weights: Vec<ScalarField> = pairs.iter().map(|&(p, q)| omega1.entry_field(p, q)).collect();
    let omega2_weights: Vec<ScalarField> = pairs.iter().map(|&(p, q)| omega2.entry_field(p, q)).collect();
    let grid = m.grid();
    let w = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    VectorField::from_nodes(grid, |x| {
                        let mut acc = if i == j { div_s.vector(x) } else { DVector::zeros(n) };
                        for k in 0..pairs.len() {
                            acc -= v[k][i][j].vector(x) * omega1_weights[k].get(x);
                            acc -= vt[k][i][j].vector(x) * omega2_weights[k].get(x);
                        }
                        acc
                    })
                })
                .collect()
        })
        .collect();
    Ok(CoefficientBundle {
        n,
        pairs,
        v,
        vt,
        s,
        w,
        omega1_weights,
        omega2_weights,
    })
}

/// Sparse discretization over the interior nodes; unknown `k * n + j` is `u_j` at interior node `k`.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub n: usize,
    pub(crate) unknowns: Unknowns,
    boundary: Vec<BoundaryCondition>,
}

impl DiscreteSystem {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    /// Expand a solution vector into full fields with the Dirichlet data on the boundary.
    pub fn expand(&self, x: &[f64]) -> Vec<ScalarField> {
        (0..self.n)
            .map(|j| {
                let mut f = self.boundary[j].as_field().clone();
                for (k, &node) in self.unknowns.interior.iter().enumerate() {
                    f.set(node, x[k * self.n + j]);
                }
                f
            })
            .collect()
    }

    /// Restrict full fields to the unknown vector.
    pub fn flatten(&self, u: &[ScalarField]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (k, &node) in self.unknowns.interior.iter().enumerate() {
            for j in 0..self.n {
                out[k * self.n + j] = u[j].get(node);
            }
        }
        out
    }
}

/// Conservative stencil for `-div(S grad u_j)`, centered differences for `W_ij . grad u_i`.
///
/// `S` must be SPD on the interior nodes.
pub fn assemble_elliptic_system(bundle: &CoefficientBundle, boundary: &[BoundaryCondition]) -> Result<DiscreteSystem> {
    let n = bundle.n;
    let grid = bundle.s.grid().clone();
    if boundary.len() != n {
        return Err(Error::Shape(format!("expected {n} boundary conditions, got {}", boundary.len())));
    }
    for bc in boundary {
        if bc.grid() != &grid {
            return Err(Error::Shape("boundary data lives on a different grid".into()));
        }
        bc.check_finite()?;
    }
    bundle.s.check_finite("S")?;
    let unk = Unknowns::new(&grid);
    let interior = Subdomain::interior(&grid);
    let restricted = bundle.s.restrict(&interior)?;
    let report = spd_check(&restricted, f64::INFINITY);
    let (worst, min_eig) = report.worst_min();
    if !(min_eig > 0.0) {
        let node = unk.interior.get(worst).copied().unwrap_or(worst);
        return Err(Error::NotSpd { what: "S", node, min_eig });
    }
    // per interior node: (row, column, value) triplets and the right-hand sides
    type NodeRows = (Vec<(usize, usize, f64)>, Vec<f64>);
    let rows: Vec<NodeRows> = unk
        .interior
        .par_iter()
        .enumerate()
        .map(|(k, &node)| {
            let mut trip = Vec::new();
            let mut rhs = vec![0.0; n];
            let principal = conservative_stencil(&bundle.s, node);
            for j in 0..n {
                let row = k * n + j;
                let mut push = |nb: usize, i: usize, w: f64| match unk.index[nb] {
                    usize::MAX => rhs[j] -= w * boundary[i].value(nb),
                    col => trip.push((row, col * n + i, w)),
                };
                for &(nb, w) in &principal {
                    push(nb, j, w);
                }
                for i in 0..n {
                    let wij = bundle.w[i][j].at(node);
                    for a in 0..n {
                        let c = wij[a] / (2.0 * grid.spacing()[a]);
                        if c != 0.0 {
                            let s = grid.stride(a);
                            push(node + s, i, c);
                            push(node - s, i, -c);
                        }
                    }
                }
            }
            (trip, rhs)
        })
        .collect();
    let mut trip = Vec::new();
    let mut rhs = Vec::with_capacity(unk.len() * n);
    for (t, r) in rows {
        trip.extend(t);
        rhs.extend(r);
    }
    let matrix = CsrMatrix::from_triplets(rhs.len(), rhs.len(), trip);
    if matrix.nrows() != rhs.len() {
        return Err(Error::Shape("row count differs from unknown count".into()));
    }
    Ok(DiscreteSystem {
        matrix,
        rhs,
        n,
        unknowns: unk,
        boundary: boundary.to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct GlobalResult {
    pub u: Vec<ScalarField>,
    pub conductivity: ConductivityField,
    /// `max |gamma - gamma^T|` of `H [grad U]^{-1}` before symmetrization.
    pub asymmetry: f64,
    pub curl: CurlResult,
    pub stats: SolveStats,
}

/// Solve the assembled system and recover `gamma = H [grad U]^{-1}`, symmetrized.
pub fn solve_global(sys: &DiscreteSystem, m: &MeasurementSet, cfg: &SolverConfig) -> Result<GlobalResult> {
    cfg.validate()?;
    let symmetric = sys.matrix.asymmetry() <= 1e-14;
    let (x, stats) = solve_system(&sys.matrix, &sys.rhs, cfg, symmetric).map_err(Error::at(Stage::GlobalSolve))?;
    let u = sys.expand(&x);
    let grid = m.grid();
    let n = sys.n;
    let du = MatrixField::from_columns(&u.iter().map(gradient).collect::<Vec<_>>())?;
    let h = m.h_matrix();
    let interior = Subdomain::interior(grid);
    let mut gamma = MatrixField::zeros(grid);
    let mut asymmetry: f64 = 0.0;
    for i in 0..grid.len() {
        let d = du.at(i);
        let det = d.determinant();
        let inv = match d.try_inverse() {
            Some(inv) if det.abs() >= DET_THRESHOLD => inv,
            _ => {
                return Err(Error::at(Stage::Recovery)(Error::Singular {
                    what: "[grad U]",
                    node: i,
                    det: det.abs(),
                }))
            }
        };
        let g: DMatrix<f64> = h.at(i) * inv;
        if interior.contains(grid, i) {
            asymmetry = asymmetry.max((&g - g.transpose()).abs().max());
        }
        gamma.set(i, &((&g + g.transpose()) * 0.5));
    }
    let conductivity = ConductivityField::new(gamma).map_err(Error::at(Stage::Recovery))?;
    let curl = curl_gamma_inverse(conductivity.gamma(), &h, Some(&interior), DET_THRESHOLD).map_err(Error::at(Stage::Curl))?;
    debug_assert_eq!(u.len(), n);
    Ok(GlobalResult {
        u,
        conductivity,
        asymmetry,
        curl,
        stats,
    })
}

/// Coefficients, assembly and solve in one call, with stage-tagged errors.
pub fn global_pipeline(
    m: &MeasurementSet,
    omega1: &MatrixField,
    omega2: &MatrixField,
    boundary: &[BoundaryCondition],
    cfg: &SolverConfig,
) -> Result<(CoefficientBundle, GlobalResult)> {
    let bundle = coefficient_fields(m, omega1, omega2, DET_THRESHOLD).map_err(Error::at(Stage::Coefficients))?;
    let sys = assemble_elliptic_system(&bundle, boundary).map_err(Error::at(Stage::Assembly))?;
    let res = solve_global(&sys, m, cfg)?;
    Ok((bundle, res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;

    fn grid() -> Grid {
        Grid::uniform(2, 9, -1.0, 1.0).unwrap()
    }

    #[test]
    fn bracket_of_translation_and_shear() {
        let g = grid();
        let e1 = VectorField::constant(&g, &[1.0, 0.0]);
        let y = VectorField::from_fn(&g, |x| vec![0.0, x[0]]);
        let b = lie_bracket(&e1, &y).unwrap();
        assert!(b.sub(&VectorField::constant(&g, &[0.0, 1.0])).max_abs() < 1e-14);
        assert_eq!(lie_bracket(&y, &y).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn bracket_of_linear_fields() {
        let g = grid();
        let x = VectorField::from_fn(&g, |p| vec![p[1], 0.0]);
        let y = VectorField::from_fn(&g, |p| vec![0.0, p[0]]);
        let expected = VectorField::from_fn(&g, |p| vec![-p[0], p[1]]);
        assert!(lie_bracket(&x, &y).unwrap().sub(&expected).max_abs() < 1e-13);
    }

    #[test]
    fn rejects_indefinite_principal_part() {
        let g = grid();
        let mut s = MatrixField::identity(&g);
        s.set(40, &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        let w = vec![vec![VectorField::zeros(&g); 2]; 2];
        let bundle = CoefficientBundle {
            n: 2,
            pairs: vec![(0, 1)],
            v: vec![],
            vt: vec![],
            s,
            w,
            omega1_weights: vec![],
            omega2_weights: vec![],
        };
        let bc = vec![BoundaryCondition::from_fn(&g, |_| 0.0); 2];
        assert!(matches!(assemble_elliptic_system(&bundle, &bc), Err(Error::NotSpd { node: 40, .. })));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = grid();
        let bundle = CoefficientBundle {
            n: 2,
            pairs: vec![(0, 1)],
            v: vec![],
            vt: vec![],
            s: MatrixField::identity(&g),
            w: vec![vec![VectorField::zeros(&g); 2]; 2],
            omega1_weights: vec![],
            omega2_weights: vec![],
        };
        let bc = vec![BoundaryCondition::from_fn(&g, |_| 0.0); 2];
        let sys = assemble_elliptic_system(&bundle, &bc).unwrap();
        assert!(sys.rhs.iter().all(|&v| v == 0.0));
        assert!(sys.matrix.asymmetry() < 1e-15);
    }

    #[test]
    fn constant_z1_splits_into_diagonal_and_transport_terms() {
        // Constant Z_1 turns the bracket into -(Z1_pi d_q - Z1_qi d_p) X_j.
        let g = grid();
        let z1m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, -1.0]);
        let z1 = MatrixField::constant(&g, &z1m);
        let frame = MatrixField::from_fn(&g, |x| DMatrix::from_row_slice(2, 2, &[x[1], x[0] + x[1], 2.0 * x[0], -x[1]]));
        // dx[l][a] = d_a X_l, exact for these linear columns
        let dx = [
            [DVector::from_vec(vec![0.0, 2.0]), DVector::from_vec(vec![1.0, 0.0])],
            [DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![1.0, -1.0])],
        ];
        let terms = frame_terms(&z1, &frame).unwrap();
        let (p, q) = (0, 1);
        for i in 0..2 {
            for j in 0..2 {
                let transport = -(&dx[j][q] * z1m[(p, i)] - &dx[j][p] * z1m[(q, i)]);
                let diag: DVector<f64> = (0..2).map(|l| &dx[l][q] * z1m[(p, l)] - &dx[l][p] * z1m[(q, l)]).sum();
                let expected = if i == j { transport + diag } else { transport };
                for node in [0, 40, 80] {
                    assert!((terms[0][i][j].vector(node) - &expected).amax() < 1e-12, "i={i} j={j}");
                }
            }
        }
    }
}
