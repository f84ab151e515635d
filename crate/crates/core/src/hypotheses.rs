//! Non-degeneracy functionals and the algebraic objects built from measurements:
//! decomposition coefficients `mu_k`, matrices `Z_k`, the constraint space and `S`.

use std::fmt;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::linalg::{antisym_basis, eigen_range, sym, sym_dim, upper_pairs};
use crate::field::{vector_gradient, Grid, MatrixField, ScalarField, Subdomain, SymBasis, VectorField};
use crate::forward::MeasurementSet;

/// Default singularity threshold on node-wise determinants.
pub const DET_THRESHOLD: f64 = 1e-10;

/// `|g1|^2 |g2|^2 - (g1 . g2)^2` node-wise.
pub fn functional_f1(g1: &VectorField, g2: &VectorField) -> ScalarField {
    let a = g1.dot(g1);
    let b = g2.dot(g2);
    let c = g1.dot(g2);
    let data = (0..a.data().len()).map(|i| a.get(i) * b.get(i) - c.get(i).powi(2)).collect();
    ScalarField::new(g1.grid().clone(), data).expect("length preserved")
}

/// `det(g_1, ..., g_n)` node-wise.
pub fn functional_f2(grads: &[VectorField]) -> Result<ScalarField> {
    let m = MatrixField::from_columns(grads)?;
    let data = (0..m.grid().len()).map(|i| m.at(i).determinant()).collect();
    ScalarField::new(m.grid().clone(), data)
}

/// Coefficients `mu_k` with `H mu_k = H_{n+k}`.
#[derive(Debug, Clone)]
pub struct DecompositionCoefficients {
    pub mu: Vec<VectorField>,
}

/// Node-wise solve of `H mu_k = H_{n+k}` with one step of iterative refinement.
///
/// A node inside `sub` where `|det H| < det_threshold` is an error; outside
/// `sub` the coefficients are set to NaN.
pub fn decomposition_coefficients(m: &MeasurementSet, sub: Option<&Subdomain>, det_threshold: f64) -> Result<DecompositionCoefficients> {
    let full = Subdomain::full(m.grid());
    let sub = sub.unwrap_or(&full);
    decompose(m, |i| sub.contains(m.grid(), i), det_threshold)
}

/// Like [`decomposition_coefficients`] but never fails on a singular node; those become NaN.
pub(crate) fn decomposition_lenient(m: &MeasurementSet, det_threshold: f64) -> Result<DecompositionCoefficients> {
    decompose(m, |_| false, det_threshold)
}

fn decompose(m: &MeasurementSet, strict: impl Fn(usize) -> bool, det_threshold: f64) -> Result<DecompositionCoefficients> {
    let grid = m.grid();
    let n = m.dim();
    let h = m.h_matrix();
    if m.extra() == 0 {
        return Err(Error::InsufficientSolutions { needed: n + 1, got: m.len() });
    }
    // Err carries the singular node and its determinant
    type NodeSolve = std::result::Result<Vec<DVector<f64>>, (usize, f64)>;
    let solves: Vec<NodeSolve> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let hm = h.at(i);
            let det = hm.determinant();
            if !(det.abs() >= det_threshold) {
                return Err((i, det));
            }
            let lu = hm.clone().lu();
            Ok((0..m.extra())
                .map(|k| {
                    let rhs = m.current(n + k).vector(i);
                    let mut x = lu.solve(&rhs).expect("non-singular");
                    let r = &rhs - &hm * &x;
                    x += lu.solve(&r).expect("non-singular");
                    x
                })
                .collect())
        })
        .collect();
    let mut per_node = Vec::with_capacity(grid.len());
    for (i, s) in solves.into_iter().enumerate() {
        match s {
            Ok(v) => per_node.push(v),
            Err((node, det)) if strict(node) => {
                return Err(Error::Singular {
                    what: "H = [H_1 .. H_n]",
                    node,
                    det: det.abs(),
                })
            }
            Err(_) => per_node.push(vec![DVector::from_element(n, f64::NAN); m.extra()]),
        }
        debug_assert_eq!(per_node.len(), i + 1);
    }
    let mu = (0..m.extra())
        .map(|k| VectorField::from_nodes(grid, |i| per_node[i][k].clone()))
        .collect();
    Ok(DecompositionCoefficients { mu })
}

/// Determinant-ratio evaluation `mu_k^i = det(H with column i replaced by H_{n+k}) / det H`.
pub fn cramer_coefficients(m: &MeasurementSet) -> Result<DecompositionCoefficients> {
    let n = m.dim();
    if m.extra() == 0 {
        return Err(Error::InsufficientSolutions { needed: n + 1, got: m.len() });
    }
    let h = m.h_matrix();
    let mu = (0..m.extra())
        .map(|k| {
            VectorField::from_nodes(m.grid(), |node| {
                let hm = h.at(node);
                let det = hm.determinant();
                let extra = m.current(n + k).vector(node);
                DVector::from_fn(n, |i, _| {
                    let mut r = hm.clone();
                    r.set_column(i, &extra);
                    r.determinant() / det
                })
            })
        })
        .collect();
    Ok(DecompositionCoefficients { mu })
}

/// `Z_k` with `Z_k[a][i] = d_a mu_k^i`: column `i` is the gradient of `mu_k^i`.
pub fn build_z(coeffs: &DecompositionCoefficients) -> Vec<MatrixField> {
    coeffs.mu.iter().map(vector_gradient).collect()
}

/// The matrices `(Z_k H^T Omega)^sym` spanning the constraint space, one field per `(k, Omega)`.
#[derive(Debug, Clone)]
pub struct ConstraintSpace {
    pub n: usize,
    /// `(k, basis index of Omega)` for each stored matrix; `k` outer.
    pub labels: Vec<(usize, usize)>,
    pub matrices: Vec<MatrixField>,
}

impl ConstraintSpace {
    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        self.matrices[0].grid()
    }

    pub fn at(&self, node: usize) -> Vec<DMatrix<f64>> {
        self.matrices.iter().map(|m| m.at(node)).collect()
    }

    /// Rank of the constraint family at a node, with relative tolerance `1e-9`.
    pub fn rank(&self, node: usize) -> usize {
        let basis = SymBasis::orthonormal(self.n);
        let cols: Vec<DVector<f64>> = self.at(node).iter().map(|m| basis.coords(m)).collect();
        if cols.is_empty() {
            return 0;
        }
        DMatrix::from_columns(&cols).rank(1e-9 * cols.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300))
    }

    /// How far the constraint family is from codimension one: `n_S - 1 - rank` per node, worst case.
    pub fn rank_deficiency(&self, nodes: &[usize]) -> usize {
        let target = sym_dim(self.n) - 1;
        nodes.iter().map(|&i| target.saturating_sub(self.rank(i))).max().unwrap_or(0)
    }
}

/// Constraint space built with the basis `{e_p (x) e_q - e_q (x) e_p}_{p<q}`.
pub fn constraint_space(z: &[MatrixField], h: &MatrixField) -> Result<ConstraintSpace> {
    constraint_space_with(z, h, &antisym_basis(h.dim()))
}

/// Constraint space built with an arbitrary basis of the antisymmetric matrices.
pub fn constraint_space_with(z: &[MatrixField], h: &MatrixField, omegas: &[DMatrix<f64>]) -> Result<ConstraintSpace> {
    let n = h.dim();
    if z.iter().any(|zk| zk.grid() != h.grid()) {
        return Err(Error::Shape("Z matrices and H live on different grids".into()));
    }
    if omegas.len() != n * (n - 1) / 2 || omegas.iter().any(|o| o.shape() != (n, n)) {
        return Err(Error::Invalid("need a basis of n(n-1)/2 antisymmetric matrices".into()));
    }
    let mut labels = Vec::new();
    let mut matrices = Vec::new();
    for (k, zk) in z.iter().enumerate() {
        for (o, omega) in omegas.iter().enumerate() {
            labels.push((k, o));
            matrices.push(MatrixField::from_nodes(h.grid(), |i| sym(&(zk.at(i) * h.at(i).transpose() * omega))));
        }
    }
    Ok(ConstraintSpace { n, labels, matrices })
}

/// Cross products `N(I)` over every increasing `(n_S - 1)`-subset `I` of the constraint matrices at one node.
pub fn subset_products(mats: &[DMatrix<f64>], basis: &SymBasis) -> Result<Vec<DMatrix<f64>>> {
    let k = basis.len() - 1;
    if mats.len() < k {
        return Err(Error::InsufficientSolutions {
            needed: k,
            got: mats.len(),
        });
    }
    mats.iter()
        .combinations(k)
        .map(|subset| {
            let owned: Vec<DMatrix<f64>> = subset.into_iter().cloned().collect();
            basis.cross(&owned)
        })
        .collect()
}

/// `B = sum_I |det N(I)|^{1/n}` node-wise.
pub fn codim_functional_b(cs: &ConstraintSpace, basis: &SymBasis) -> Result<ScalarField> {
    let need = sym_dim(cs.n) - 1;
    if cs.len() < need {
        return Err(Error::InsufficientSolutions {
            needed: need,
            got: cs.len(),
        });
    }
    let grid = cs.grid().clone();
    let inv_n = 1.0 / cs.n as f64;
    let data: Result<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            Ok(subset_products(&cs.at(i), basis)?
                .iter()
                .map(|m| m.determinant().abs().powf(inv_n))
                .sum())
        })
        .collect();
    ScalarField::new(grid, data?)
}

/// `Z^* = Z^{-T}`; singular nodes inside `sub` are an error, outside they become NaN.
pub fn dual_frame(z: &MatrixField, sub: Option<&Subdomain>, det_threshold: f64, what: &'static str) -> Result<MatrixField> {
    let grid = z.grid();
    let n = z.dim();
    for i in 0..grid.len() {
        let det = z.at(i).determinant();
        if !(det.abs() >= det_threshold) && sub.is_none_or(|s| s.contains(grid, i)) {
            return Err(Error::Singular {
                what,
                node: i,
                det: det.abs(),
            });
        }
    }
    Ok(z.map_nodes(|_, m| match m.try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => inv.transpose(),
        _ => DMatrix::from_element(n, n, f64::NAN),
    }))
}

/// `S = (Z_2^{-T} Z_1^T Omega_1 + H Z_1^T Omega_2)^sym`.
pub fn build_s(
    z1: &MatrixField,
    z2: &MatrixField,
    h: &MatrixField,
    omega1: &MatrixField,
    omega2: &MatrixField,
    sub: Option<&Subdomain>,
    det_threshold: f64,
) -> Result<MatrixField> {
    let zstar = dual_frame(z2, sub, det_threshold, "Z_2")?;
    Ok(s_from_dual(z1, &zstar, h, omega1, omega2))
}

pub(crate) fn s_from_dual(z1: &MatrixField, zstar: &MatrixField, h: &MatrixField, omega1: &MatrixField, omega2: &MatrixField) -> MatrixField {
    MatrixField::from_nodes(h.grid(), |i| {
        let z1t = z1.at(i).transpose();
        sym(&(zstar.at(i) * &z1t * omega1.at(i) + h.at(i) * &z1t * omega2.at(i)))
    })
}

/// The antisymmetric field `sum_{p<q} w_pq (e_p (x) e_q - e_q (x) e_p)` has weights `w_pq = Omega_pq`.
pub fn omega_weights(omega: &MatrixField) -> Vec<((usize, usize), ScalarField)> {
    upper_pairs(omega.dim())
        .into_iter()
        .map(|(p, q)| ((p, q), omega.entry_field(p, q)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// Two independent current densities (`F_1`).
    TwoSolutions,
    /// `n` currents forming a basis (`F_2`).
    Basis,
    /// Constraint space of codimension one (`B`).
    Codimension,
    /// Invertibility of the `Z` matrix that is dualized in `S`.
    InvertibleZ,
    /// Uniform ellipticity of `S`.
    EllipticS,
    /// `|det Z_1|`, reported for information only.
    DetZ1,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 5] = [
        Hypothesis::TwoSolutions,
        Hypothesis::Basis,
        Hypothesis::Codimension,
        Hypothesis::InvertibleZ,
        Hypothesis::EllipticS,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Hypothesis::TwoSolutions => "hyp1-two-solutions",
            Hypothesis::Basis => "hyp2-basis",
            Hypothesis::Codimension => "hyp3-codimension",
            Hypothesis::InvertibleZ => "hyp4a-invertible-z",
            Hypothesis::EllipticS => "hyp4b-elliptic-s",
            Hypothesis::DetZ1 => "det-z1",
        }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub hypothesis: Hypothesis,
    pub infimum: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Whether a failure makes the overall check fail.
    pub gating: bool,
    /// Full-grid index of the minimizer and its coordinates.
    pub node: usize,
    pub location: Vec<f64>,
}

impl HypothesisReport {
    fn from_field(hypothesis: Hypothesis, f: &ScalarField, sub: &Subdomain, threshold: f64, gating: bool) -> Self {
        let grid = f.grid();
        let (node, infimum) = sub
            .nodes(grid)
            .into_iter()
            .map(|i| (i, f.get(i)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((0, f64::NAN));
        HypothesisReport {
            hypothesis,
            infimum,
            threshold,
            passed: infimum >= threshold,
            gating,
            node,
            location: grid.point(node),
        }
    }

    pub fn to_error(&self) -> Error {
        Error::Hypothesis {
            hypothesis: self.hypothesis.label(),
            node: self.node,
            value: self.infimum,
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HypothesisConfig {
    /// Box over which infima are taken; defaults to the grid minus one boundary layer.
    pub subdomain: Option<Subdomain>,
    pub c0: f64,
    pub c1: f64,
    pub det_threshold: f64,
    /// `Omega_1`, `Omega_2` for the ellipticity of `S`.
    pub omegas: Option<(MatrixField, MatrixField)>,
    pub checks: Vec<Hypothesis>,
}

impl Default for HypothesisConfig {
    fn default() -> Self {
        HypothesisConfig {
            subdomain: None,
            c0: 1e-6,
            c1: 1e-6,
            det_threshold: DET_THRESHOLD,
            omegas: None,
            checks: Hypothesis::ALL.to_vec(),
        }
    }
}

impl HypothesisConfig {
    pub fn subdomain_for(&self, grid: &Grid) -> Subdomain {
        self.subdomain.clone().unwrap_or_else(|| Subdomain::interior(grid))
    }
}

/// Evaluate the requested hypothesis functionals on a measurement set.
///
/// The functionals are evaluated on the measured currents: `F_1(H_1, H_2)` and
/// `det H` vanish exactly where their gradient counterparts do. A
/// `Hypothesis::DetZ1` report is appended whenever `Hypothesis::InvertibleZ` is
/// requested.
pub fn check_hypotheses(m: &MeasurementSet, cfg: &HypothesisConfig) -> Result<Vec<HypothesisReport>> {
    let grid = m.grid();
    let n = m.dim();
    let sub = cfg.subdomain_for(grid);
    sub.validate(grid)?;
    let wants = |h: Hypothesis| cfg.checks.contains(&h);
    let mut reports = Vec::new();

    if wants(Hypothesis::TwoSolutions) {
        if m.len() < 2 {
            return Err(Error::InsufficientSolutions { needed: 2, got: m.len() });
        }
        let f1 = functional_f1(m.current(0), m.current(1));
        reports.push(HypothesisReport::from_field(Hypothesis::TwoSolutions, &f1, &sub, cfg.c0, true));
    }
    if wants(Hypothesis::Basis) {
        let f2 = functional_f2(&m.currents()[..n])?.map(f64::abs);
        reports.push(HypothesisReport::from_field(Hypothesis::Basis, &f2, &sub, cfg.c0, true));
    }
    let needs_z = wants(Hypothesis::Codimension) || wants(Hypothesis::InvertibleZ) || wants(Hypothesis::EllipticS);
    if !needs_z {
        return Ok(reports);
    }
    let m_needed_codim = (sym_dim(n) - 1).div_ceil(n * (n - 1) / 2);
    let needed = if wants(Hypothesis::InvertibleZ) || wants(Hypothesis::EllipticS) {
        m_needed_codim.max(2)
    } else {
        m_needed_codim
    };
    if m.extra() < needed {
        return Err(Error::InsufficientSolutions {
            needed: n + needed,
            got: m.len(),
        });
    }
    // where H is singular the later functionals are NaN and reported as failures
    let coeffs = decomposition_lenient(m, cfg.det_threshold)?;
    let z = build_z(&coeffs);
    let h = m.h_matrix();
    let nan_to_neg = |f: ScalarField| f.map(|v| if v.is_nan() { f64::NEG_INFINITY } else { v });

    if wants(Hypothesis::Codimension) {
        let cs = constraint_space(&z, &h)?;
        let b = codim_functional_b(&cs, &SymBasis::orthonormal(n))?;
        reports.push(HypothesisReport::from_field(Hypothesis::Codimension, &nan_to_neg(b), &sub, cfg.c1, true));
    }
    if wants(Hypothesis::InvertibleZ) {
        let det = |zk: &MatrixField| {
            ScalarField::new(grid.clone(), (0..grid.len()).map(|i| zk.at(i).determinant().abs()).collect()).expect("length")
        };
        reports.push(HypothesisReport::from_field(Hypothesis::InvertibleZ, &nan_to_neg(det(&z[1])), &sub, cfg.c0, true));
        reports.push(HypothesisReport::from_field(Hypothesis::DetZ1, &nan_to_neg(det(&z[0])), &sub, cfg.c0, false));
    }
    if wants(Hypothesis::EllipticS) {
        let (o1, o2) = cfg
            .omegas
            .as_ref()
            .ok_or_else(|| Error::Invalid("the ellipticity check needs Omega_1 and Omega_2".into()))?;
        let zstar = z[1].map_nodes(|_, m| match m.try_inverse() {
            Some(inv) => inv.transpose(),
            None => DMatrix::from_element(n, n, f64::NAN),
        });
        let s = s_from_dual(&z[0], &zstar, &h, o1, o2);
        let min_eig = ScalarField::new(
            grid.clone(),
            (0..grid.len())
                .map(|i| {
                    let si = s.at(i);
                    if si.iter().all(|v| v.is_finite()) {
                        eigen_range(&si).0
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect(),
        )?;
        reports.push(HypothesisReport::from_field(Hypothesis::EllipticS, &min_eig, &sub, cfg.c0, true));
    }
    Ok(reports)
}

/// First failing gating report, if any.
pub fn first_failure(reports: &[HypothesisReport]) -> Option<&HypothesisReport> {
    reports.iter().find(|r| r.gating && !r.passed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::Provenance;

    fn grid() -> Grid {
        Grid::uniform(2, 7, -1.0, 1.0).unwrap()
    }

    fn identity_bundle(g: &Grid) -> MeasurementSet {
        let h = vec![
            VectorField::constant(g, &[1.0, 0.0]),
            VectorField::constant(g, &[0.0, 1.0]),
            VectorField::from_fn(g, |x| vec![x[0], -x[1]]),
            VectorField::from_fn(g, |x| vec![x[1], x[0]]),
        ];
        MeasurementSet::new(h, Vec::new(), Provenance::Analytic).unwrap()
    }

    #[test]
    fn f1_examples() {
        let g = grid();
        let e1 = VectorField::constant(&g, &[1.0, 0.0]);
        let e2 = VectorField::constant(&g, &[0.0, 1.0]);
        assert!(functional_f1(&e1, &e2).data().iter().all(|&v| v == 1.0));
        let v = VectorField::from_fn(&g, |x| vec![x[0], 1.0]);
        let w = VectorField::from_fn(&g, |x| vec![2.0 * x[0], 2.0]);
        assert!(functional_f1(&v, &w).max_abs() < 1e-14);
    }

    #[test]
    fn identity_constant_case_objects() {
        let g = grid();
        let m = identity_bundle(&g);
        let coeffs = decomposition_coefficients(&m, None, DET_THRESHOLD).unwrap();
        let mu1 = VectorField::from_fn(&g, |x| vec![x[0], -x[1]]);
        assert!(coeffs.mu[0].sub(&mu1).max_abs() < 1e-14);
        let z = build_z(&coeffs);
        let z1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let z2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(z[0].max_diff(&MatrixField::constant(&g, &z1)) < 1e-12);
        assert!(z[1].max_diff(&MatrixField::constant(&g, &z2)) < 1e-12);
        let cs = constraint_space(&z, &m.h_matrix()).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs.rank_deficiency(&[0, 10]), 0);
        let b = codim_functional_b(&cs, &SymBasis::orthonormal(2)).unwrap();
        assert!(b.data().iter().all(|v| (v - 2f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn singular_h_names_the_node() {
        let g = grid();
        let h = vec![
            VectorField::constant(&g, &[1.0, 0.0]),
            VectorField::from_fn(&g, |x| vec![1.0, x[0]]),
            VectorField::constant(&g, &[0.0, 1.0]),
        ];
        let m = MeasurementSet::new(h, Vec::new(), Provenance::Analytic).unwrap();
        match decomposition_coefficients(&m, None, DET_THRESHOLD) {
            Err(Error::Singular { node, .. }) => assert_eq!(g.point(node)[0], 0.0),
            other => panic!("expected singular H, got {other:?}"),
        }
    }

    #[test]
    fn zero_omegas_give_zero_s() {
        let g = grid();
        let z = MatrixField::identity(&g);
        let zero = MatrixField::zeros(&g);
        let s = build_s(&z, &z, &z, &zero, &zero, None, DET_THRESHOLD).unwrap();
        assert_eq!(s.max_diff(&zero), 0.0);
    }

    #[test]
    fn not_enough_constraints() {
        let g = grid();
        let m = identity_bundle(&g).select(&[0, 1, 2]).unwrap();
        let coeffs = decomposition_coefficients(&m, None, DET_THRESHOLD).unwrap();
        let cs = constraint_space(&build_z(&coeffs), &m.h_matrix()).unwrap();
        assert!(matches!(
            codim_functional_b(&cs, &SymBasis::orthonormal(2)),
            Err(Error::InsufficientSolutions { needed: 2, got: 1 })
        ));
    }
}
