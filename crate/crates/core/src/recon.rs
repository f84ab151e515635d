//! Local reconstructions: the scalar factor `beta`, the anisotropic structure
//! `gamma_tilde`, the curl of `gamma^{-1}`, and the joint pipeline.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::conductivity::ConductivityField;
use crate::error::{Error, Result, Stage};
use crate::field::linalg::{eigen_range, sym, upper_pairs};
use crate::field::{exterior_derivative, partial, Grid, MatrixField, ScalarField, Subdomain, SymBasis, VectorField};
use crate::forward::MeasurementSet;
use crate::hypotheses::{
    build_z, codim_functional_b, constraint_space, decomposition_coefficients, functional_f1, subset_products,
    ConstraintSpace, DET_THRESHOLD,
};
use crate::sparse::{conjugate_gradient, CsrMatrix};

/// Known value of `beta` at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub node: usize,
    pub value: f64,
}

impl Anchor {
    pub fn new(node: usize, value: f64) -> Result<Anchor> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Invalid(format!("anchor value must be positive, got {value}")));
        }
        Ok(Anchor { node, value })
    }

    /// Anchor at the node nearest to `x`.
    pub fn at_point(grid: &Grid, x: &[f64], value: f64) -> Result<Anchor> {
        Anchor::new(grid.nearest(x), value)
    }
}

/// Relative tolerance on `det gamma_tilde = 1`.
const UNIT_DET_TOL: f64 = 1e-8;

/// Right-hand side `F` of the gradient equation `grad log beta = F`.
///
/// With `V_j = gamma_tilde^{-1} H_j`, `G_j = gamma_tilde H_j` and
/// `D = |H_1|^2 |H_2|^2 - (H_1 . H_2)^2`:
///
/// `s = (|H_1|^2 dV_2(G_1, G_2) - (H_1 . H_2) dV_1(G_1, G_2)) / D`,
/// `F = (s V_1 - dV_1(G_1, .)) / |H_1|^2`.
///
/// Nodes of `sub` with `D < c0` are an error.
pub fn log_beta_gradient(
    h1: &VectorField,
    h2: &VectorField,
    gamma_tilde: &MatrixField,
    c0: f64,
    sub: Option<&Subdomain>,
) -> Result<VectorField> {
    let grid = h1.grid();
    if h2.grid() != grid || gamma_tilde.grid() != grid {
        return Err(Error::Shape("currents and anisotropic structure live on different grids".into()));
    }
    let full = Subdomain::full(grid);
    let sub = sub.unwrap_or(&full);
    let n = grid.dim();
    for i in sub.nodes(grid) {
        let det = gamma_tilde.at(i).determinant();
        if !((det - 1.0).abs() <= UNIT_DET_TOL) {
            return Err(Error::Invalid(format!(
                "anisotropic structure must have unit determinant, got {det} at node {i}"
            )));
        }
    }
    let d = functional_f1(h1, h2);
    for i in sub.nodes(grid) {
        if !(d.get(i) >= c0) {
            return Err(Error::Hypothesis {
                hypothesis: "hyp1-two-solutions",
                node: i,
                value: d.get(i),
                threshold: c0,
            });
        }
    }
    let inv = gamma_tilde.map_nodes(|_, m| m.try_inverse().unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN)));
    let v1 = inv.apply(h1);
    let v2 = inv.apply(h2);
    let dv1 = exterior_derivative(&v1);
    let dv2 = exterior_derivative(&v2);
    let g1 = gamma_tilde.apply(h1);
    let g2 = gamma_tilde.apply(h2);
    Ok(VectorField::from_nodes(grid, |i| {
        let (a1, a2) = (g1.vector(i), g2.vector(i));
        let c1 = dv1.at(i);
        let c2 = dv2.at(i);
        let hh1 = h1.vector(i);
        let hh2 = h2.vector(i);
        let n11 = hh1.norm_squared();
        let n12 = hh1.dot(&hh2);
        let w1 = (a1.transpose() * &c1 * &a2)[(0, 0)];
        let w2 = (a1.transpose() * &c2 * &a2)[(0, 0)];
        let s = (n11 * w2 - n12 * w1) / d.get(i);
        let contract: DVector<f64> = (a1.transpose() * &c1).transpose();
        (v1.vector(i) * s - contract) / n11
    }))
}

/// `beta(x) = beta(x0) exp(int_0^1 (x - x0) . F(x0 + t (x - x0)) dt)`.
///
/// Composite trapezoid rule with steps no longer than the smallest grid
/// spacing and multilinear interpolation of `F`.
pub fn integrate_gradient(f: &VectorField, anchor: &Anchor) -> Result<ScalarField> {
    f.check_finite("log-beta gradient")?;
    let grid = f.grid();
    if anchor.node >= grid.len() {
        return Err(Error::Invalid("anchor node outside the grid".into()));
    }
    let x0 = grid.point(anchor.node);
    let h = grid.min_spacing();
    let log0 = anchor.value.ln();
    let data: Result<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = grid.point(i);
            let dx: Vec<f64> = x.iter().zip(&x0).map(|(a, b)| a - b).collect();
            let len = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
            let steps = ((len / h).ceil() as usize).max(1);
            let mut acc = 0.0;
            for s in 0..=steps {
                let t = s as f64 / steps as f64;
                let p: Vec<f64> = x0.iter().zip(&dx).map(|(a, d)| a + t * d).collect();
                let fv = f.interpolate(&p).ok_or(Error::SegmentOutside { from: anchor.node, to: i })?;
                let w = if s == 0 || s == steps { 0.5 } else { 1.0 };
                acc += w * fv.iter().zip(&dx).map(|(a, b)| a * b).sum::<f64>();
            }
            Ok((log0 + acc / steps as f64).exp())
        })
        .collect();
    ScalarField::new(grid.clone(), data?)
}

/// Least-squares potential of `F`: minimizes the squared mismatch between
/// edge differences of `log beta` and edge-midpoint averages of `F`.
///
/// The normal equations form a Neumann graph Laplacian; its constant kernel
/// is handled by projecting the mean, and the constant is fixed by the anchor.
/// Returns `log beta`.
pub fn poisson_normal_recon(f: &VectorField, anchor: &Anchor, tol: f64) -> Result<ScalarField> {
    f.check_finite("log-beta gradient")?;
    let grid = f.grid();
    if anchor.node >= grid.len() {
        return Err(Error::Invalid("anchor node outside the grid".into()));
    }
    let n = grid.dim();
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        for a in 0..n {
            if grid.coord(i, a) + 1 == grid.dims()[a] {
                continue;
            }
            let j = i + grid.stride(a);
            let h = grid.spacing()[a];
            let w = 1.0 / (h * h);
            let mid = 0.5 * (f.at(i)[a] + f.at(j)[a]);
            trip.extend([(i, i, w), (j, j, w), (i, j, -w), (j, i, -w)]);
            rhs[j] += mid / h;
            rhs[i] -= mid / h;
        }
    }
    let lap = CsrMatrix::from_triplets(grid.len(), grid.len(), trip);
    let (phi, _) = conjugate_gradient(&lap, &rhs, tol, 20 * grid.len().max(100), true)?;
    let shift = anchor.value.ln() - phi[anchor.node];
    ScalarField::new(grid.clone(), phi.into_iter().map(|v| v + shift).collect())
}

/// Output of [`reconstruct_gamma_tilde`].
#[derive(Debug, Clone)]
pub struct GammaTildeRecon {
    pub gamma_tilde: MatrixField,
    pub b: ScalarField,
    /// Nodes where `sign(N_11)` and `sign(tr N)` disagree for some subset.
    pub sign_disagreements: usize,
}

/// Recover `gamma_tilde` from `sum_I sign(tr N(I)) N(I) = B gamma_tilde`.
///
/// The sum is symmetrized and scaled to unit determinant. Nodes of `sub`
/// with `B < c1` or a non-SPD result are errors; elsewhere they hold NaN.
pub fn reconstruct_gamma_tilde(cs: &ConstraintSpace, basis: &SymBasis, c1: f64, sub: Option<&Subdomain>) -> Result<GammaTildeRecon> {
    let grid = cs.grid().clone();
    let full = Subdomain::full(&grid);
    let sub = sub.unwrap_or(&full);
    let n = cs.n;
    let inv_n = 1.0 / n as f64;
    let b = codim_functional_b(cs, basis)?;
    let per_node: Vec<Result<(DMatrix<f64>, bool)>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let strict = sub.contains(&grid, i);
            let nan = || (DMatrix::from_element(n, n, f64::NAN), false);
            let bi = b.get(i);
            if !(bi >= c1) {
                return if strict {
                    Err(Error::Hypothesis {
                        hypothesis: "hyp3-codimension",
                        node: i,
                        value: bi,
                        threshold: c1,
                    })
                } else {
                    Ok(nan())
                };
            }
            let products = subset_products(&cs.at(i), basis)?;
            let mut disagree = false;
            let mut acc = DMatrix::zeros(n, n);
            for m in &products {
                let s = m.trace().signum();
                if m[(0, 0)].abs() > 1e-12 * m.norm() && m[(0, 0)].signum() != s {
                    disagree = true;
                }
                acc += m * s;
            }
            let g = sym(&(acc / bi));
            let det = g.determinant();
            let (lo, _) = eigen_range(&g);
            if !(det > 0.0 && lo > 0.0) {
                return if strict {
                    Err(Error::NotSpd {
                        what: "reconstructed anisotropic structure",
                        node: i,
                        min_eig: lo,
                    })
                } else {
                    Ok(nan())
                };
            }
            Ok((g / det.powf(inv_n), disagree))
        })
        .collect();
    let mut mats = Vec::with_capacity(grid.len());
    let mut sign_disagreements = 0;
    for r in per_node {
        let (m, d) = r?;
        sign_disagreements += d as usize;
        mats.push(m);
    }
    Ok(GammaTildeRecon {
        gamma_tilde: MatrixField::from_nodes(&grid, |i| mats[i].clone()),
        b,
        sign_disagreements,
    })
}

/// One component `d_q (gamma^{-1})_{pl} - d_p (gamma^{-1})_{ql}` (0-based `l`, `p < q`).
#[derive(Debug, Clone)]
pub struct CurlComponent {
    pub l: usize,
    pub p: usize,
    pub q: usize,
    pub field: ScalarField,
}

#[derive(Debug, Clone)]
pub struct CurlResult {
    /// From currents: `sum H^{il} (gamma^{qj} d_p H_{ji} - gamma^{pj} d_q H_{ji})`.
    pub formula: Vec<CurlComponent>,
    /// Finite differences of the entries of `gamma^{-1}`.
    pub direct: Vec<CurlComponent>,
}

impl CurlResult {
    /// Largest node-wise difference between the two evaluations over `sub`.
    pub fn max_discrepancy(&self, sub: &Subdomain) -> f64 {
        self.formula
            .iter()
            .zip(&self.direct)
            .flat_map(|(a, b)| {
                let g = a.field.grid();
                sub.nodes(g).into_iter().map(move |i| (a.field.get(i) - b.field.get(i)).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Curl of the columns of `gamma^{-1}` directly from finite differences.
pub fn direct_curl(gamma_inv: &MatrixField) -> Vec<CurlComponent> {
    let n = gamma_inv.dim();
    let mut out = Vec::new();
    for l in 0..n {
        for (p, q) in upper_pairs(n) {
            let a = partial(&gamma_inv.entry_field(p, l), q);
            let b = partial(&gamma_inv.entry_field(q, l), p);
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            out.push(CurlComponent {
                l,
                p,
                q,
                field: ScalarField::new(gamma_inv.grid().clone(), data).expect("length"),
            });
        }
    }
    out
}

/// Curl of `gamma^{-1}` evaluated from the currents `H = [H_1 | ... | H_n]` and `gamma`.
pub fn curl_gamma_inverse(gamma: &MatrixField, h: &MatrixField, sub: Option<&Subdomain>, det_threshold: f64) -> Result<CurlResult> {
    let grid = h.grid();
    if gamma.grid() != grid {
        return Err(Error::Shape("conductivity and currents live on different grids".into()));
    }
    let n = grid.dim();
    let full = Subdomain::full(grid);
    let sub = sub.unwrap_or(&full);
    for i in sub.nodes(grid) {
        let det = h.at(i).determinant();
        if !(det.abs() >= det_threshold) {
            return Err(Error::Singular {
                what: "H = [H_1 .. H_n]",
                node: i,
                det: det.abs(),
            });
        }
    }
    let nan = DMatrix::from_element(n, n, f64::NAN);
    let h_inv = h.map_nodes(|_, m| m.try_inverse().unwrap_or_else(|| nan.clone()));
    let g_inv = gamma.map_nodes(|_, m| m.try_inverse().unwrap_or_else(|| nan.clone()));
    // dh[a][(j, i)] = d_a H_{ji}
    let dh: Vec<Vec<ScalarField>> = (0..n)
        .map(|a| {
            (0..n * n)
                .map(|ji| partial(&h.entry_field(ji / n, ji % n), a))
                .collect()
        })
        .collect();
    let mut formula = Vec::new();
    for l in 0..n {
        for (p, q) in upper_pairs(n) {
            let data = (0..grid.len())
                .map(|x| {
                    let mut s = 0.0;
                    for i in 0..n {
                        let hil = h_inv.entry(x, i, l);
                        for j in 0..n {
                            s += hil
                                * (g_inv.entry(x, q, j) * dh[p][j * n + i].get(x)
                                    - g_inv.entry(x, p, j) * dh[q][j * n + i].get(x));
                        }
                    }
                    s
                })
                .collect();
            formula.push(CurlComponent {
                l,
                p,
                q,
                field: ScalarField::new(grid.clone(), data)?,
            });
        }
    }
    Ok(CurlResult {
        formula,
        direct: direct_curl(&g_inv),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaMethod {
    /// Straight-segment path integration from the anchor.
    Integrate,
    /// Least-squares (normal equation) potential.
    Poisson,
    /// Both, reporting their discrepancy; the integrated value is returned.
    Both,
}

#[derive(Debug, Clone)]
pub struct JointConfig {
    /// Reconstruction box; defaults to the grid minus one boundary layer.
    pub subdomain: Option<Subdomain>,
    pub c0: f64,
    pub c1: f64,
    pub det_threshold: f64,
    pub beta_method: BetaMethod,
    /// Use this anisotropic structure instead of reconstructing it.
    pub known_gamma_tilde: Option<MatrixField>,
    pub basis: Option<SymBasis>,
    pub poisson_tol: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            subdomain: None,
            c0: 1e-6,
            c1: 1e-6,
            det_threshold: DET_THRESHOLD,
            beta_method: BetaMethod::Integrate,
            known_gamma_tilde: None,
            basis: None,
            poisson_tol: 1e-12,
        }
    }
}

/// Output of [`joint_pipeline`]; every field lives on the reconstruction subgrid.
#[derive(Debug, Clone)]
pub struct JointResult {
    pub subdomain: Subdomain,
    pub conductivity: ConductivityField,
    /// Codimension functional, when `gamma_tilde` was reconstructed.
    pub b: Option<ScalarField>,
    pub log_beta_gradient: VectorField,
    pub beta_integrated: Option<ScalarField>,
    pub beta_poisson: Option<ScalarField>,
    /// `max |beta_integrated - beta_poisson|` when both were computed.
    pub method_discrepancy: Option<f64>,
    /// `max |dF|`: zero for data in the range of the gradient.
    pub curl_free_defect: f64,
    pub curl: CurlResult,
    pub sign_disagreements: usize,
}

/// Reconstruct `gamma = beta gamma_tilde` on a subdomain from `n + m` currents.
pub fn joint_pipeline(m: &MeasurementSet, anchor: &Anchor, cfg: &JointConfig) -> Result<JointResult> {
    let grid = m.grid();
    let n = m.dim();
    let sub = cfg.subdomain.clone().unwrap_or_else(|| Subdomain::interior(grid));
    sub.validate(grid)?;
    if !sub.contains(grid, anchor.node) {
        return Err(Error::Invalid(format!("anchor node {} lies outside the reconstruction box", anchor.node)));
    }
    if m.len() < 2 {
        return Err(Error::InsufficientSolutions { needed: 2, got: m.len() });
    }
    let h = m.h_matrix();
    let (gamma_tilde, b, sign_disagreements) = match &cfg.known_gamma_tilde {
        Some(gt) => (gt.clone(), None, 0),
        None => {
            let coeffs = decomposition_coefficients(m, Some(&sub), cfg.det_threshold).map_err(Error::at(Stage::Decomposition))?;
            let z = build_z(&coeffs);
            for zk in &z {
                // NaN outside the box is expected; check only inside
                if let Some(i) = sub.nodes(grid).into_iter().find(|&i| zk.raw(i).iter().any(|v| !v.is_finite())) {
                    return Err(Error::at(Stage::BuildZ)(Error::NonFinite { what: "Z", node: i }));
                }
            }
            let cs = constraint_space(&z, &h).map_err(Error::at(Stage::ConstraintSpace))?;
            let basis = cfg.basis.clone().unwrap_or_else(|| SymBasis::orthonormal(n));
            let rec = reconstruct_gamma_tilde(&cs, &basis, cfg.c1, Some(&sub)).map_err(Error::at(Stage::GammaTilde))?;
            (rec.gamma_tilde, Some(rec.b), rec.sign_disagreements)
        }
    };
    let f = log_beta_gradient(m.current(0), m.current(1), &gamma_tilde, cfg.c0, Some(&sub)).map_err(Error::at(Stage::LogBetaGradient))?;
    let f_sub = f.restrict(&sub)?;
    f_sub.check_finite("log-beta gradient").map_err(Error::at(Stage::LogBetaGradient))?;
    let sub_grid = f_sub.grid().clone();
    let local = Anchor {
        node: sub.local_index(grid, &sub_grid, anchor.node).expect("anchor checked inside"),
        value: anchor.value,
    };
    let beta_integrated = match cfg.beta_method {
        BetaMethod::Integrate | BetaMethod::Both => Some(integrate_gradient(&f_sub, &local).map_err(Error::at(Stage::Integration))?),
        BetaMethod::Poisson => None,
    };
    let beta_poisson = match cfg.beta_method {
        BetaMethod::Poisson | BetaMethod::Both => Some(
            poisson_normal_recon(&f_sub, &local, cfg.poisson_tol)
                .map_err(Error::at(Stage::Poisson))?
                .map(f64::exp),
        ),
        BetaMethod::Integrate => None,
    };
    let method_discrepancy = match (&beta_integrated, &beta_poisson) {
        (Some(a), Some(b)) => Some(a.max_abs_diff(b)),
        _ => None,
    };
    let beta = beta_integrated.clone().or_else(|| beta_poisson.clone()).expect("one method ran");
    let gt_sub = gamma_tilde.restrict(&sub)?;
    let conductivity = ConductivityField::from_parts(&beta, &gt_sub).map_err(Error::at(Stage::Recovery))?;
    let curl = curl_gamma_inverse(conductivity.gamma(), &h.restrict(&sub)?, None, cfg.det_threshold).map_err(Error::at(Stage::Curl))?;
    let curl_free_defect = exterior_derivative(&f_sub).max_abs();
    Ok(JointResult {
        b: b.map(|b| b.restrict(&sub)).transpose()?,
        subdomain: sub,
        conductivity,
        log_beta_gradient: f_sub,
        beta_integrated,
        beta_poisson,
        method_discrepancy,
        curl_free_defect,
        curl,
        sign_disagreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_gives_constant() {
        let g = Grid::uniform(2, 9, 0.0, 1.0).unwrap();
        let f = VectorField::zeros(&g);
        let a = Anchor::new(40, 5.0).unwrap();
        let beta = integrate_gradient(&f, &a).unwrap();
        assert!(beta.data().iter().all(|&v| (v - 5.0).abs() < 1e-14));
        let lb = poisson_normal_recon(&f, &a, 1e-12).unwrap();
        assert!(lb.data().iter().all(|&v| (v - 5f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn constant_gradient_is_integrated_exactly() {
        let g = Grid::uniform(2, 11, -0.5, 0.5).unwrap();
        let f = VectorField::constant(&g, &[1.0, 1.0]);
        let x0 = g.point(17);
        let a = Anchor::new(17, (x0[0] + x0[1]).exp()).unwrap();
        let beta = integrate_gradient(&f, &a).unwrap();
        let exact = ScalarField::from_fn(&g, |x| (x[0] + x[1]).exp());
        assert!(beta.max_abs_diff(&exact) < 1e-12);
        let lb = poisson_normal_recon(&f, &a, 1e-13).unwrap();
        let exact_log = ScalarField::from_fn(&g, |x| x[0] + x[1]);
        assert!(lb.max_abs_diff(&exact_log) < 1e-10);
    }

    #[test]
    fn rejects_non_positive_anchor() {
        assert!(Anchor::new(0, 0.0).is_err());
        assert!(Anchor::new(0, -1.0).is_err());
    }

    #[test]
    fn constant_beta_has_zero_gradient() {
        let g = Grid::uniform(2, 9, 0.0, 1.0).unwrap();
        let h1 = VectorField::constant(&g, &[1.0, 0.0]);
        let h2 = VectorField::constant(&g, &[0.0, 1.0]);
        let f = log_beta_gradient(&h1, &h2, &MatrixField::identity(&g), 1e-6, None).unwrap();
        assert!(f.max_abs() < 1e-14);
        let bad = MatrixField::constant(&g, &(DMatrix::identity(2, 2) * 2.0));
        assert!(log_beta_gradient(&h1, &h2, &bad, 1e-6, None).is_err());
        assert!(matches!(
            log_beta_gradient(&h1, &h1, &MatrixField::identity(&g), 1e-6, None),
            Err(Error::Hypothesis { .. })
        ));
    }
}
