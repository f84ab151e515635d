//! Closed-form conductivities with explicit solution bundles, and
//! push-forwards under diffeomorphisms.

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conductivity::ConductivityField;
use crate::error::{Error, Result};
use crate::field::linalg::spd_sqrt;
use crate::field::{Grid, MatrixField, ScalarField, VectorField};
use crate::forward::{synthesize_measurements, BoundaryCondition, MeasurementSet, Provenance, SolverConfig, Sources};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// One exact solution of `div(gamma grad u) = 0`.
#[derive(Clone)]
pub struct Solution {
    pub u: ScalarFn,
    pub grad: VectorFn,
    /// Exact second derivatives, when available.
    pub hessian: Option<MatrixFn>,
}

/// Exact derived objects of a case: `Z_k`, `H = [H_1 .. H_n]`, weight fields and `S`.
#[derive(Clone)]
pub struct Structure {
    pub z: Vec<MatrixFn>,
    pub h: MatrixFn,
    pub omega1: MatrixFn,
    pub omega2: MatrixFn,
    pub s: MatrixFn,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaseParams {
    Constant { gamma0: DMatrix<f64>, t: Vec<f64> },
    Cgo { beta: f64, rho: f64, k: Vec<f64>, k_perp: Vec<f64> },
    IsotropicExponential { a: f64, b: f64 },
    Pushed { base: Box<CaseParams>, map: String },
}

#[derive(Clone)]
pub struct AnalyticCase {
    pub name: String,
    pub n: usize,
    pub gamma: MatrixFn,
    /// `(div gamma)_b = sum_a d_a gamma_ab`.
    pub div_gamma: Option<VectorFn>,
    pub solutions: Vec<Solution>,
    pub structure: Option<Structure>,
    pub params: CaseParams,
    /// Default sampling box `[lo, hi]^n`.
    pub domain: (f64, f64),
}

impl std::fmt::Debug for AnalyticCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticCase")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("solutions", &self.solutions.len())
            .field("params", &self.params)
            .field("domain", &self.domain)
            .finish()
    }
}

const PDE_TOL: f64 = 1e-10;
const PDE_SAMPLES: usize = 100;

fn constant_fn(m: DMatrix<f64>) -> MatrixFn {
    Arc::new(move |_| m.clone())
}

fn vec_of(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

fn j2() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

fn rot2(sign: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, sign, -sign, 0.0])
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((n, n), (m, m)).copy_from(b);
    out
}

/// Constant-case matrices for `gamma_0 = I`: `Z_1^0, Z_2^0, Omega_1^0, Omega_2^0, S^0`.
#[derive(Debug, Clone)]
struct Blocks {
    z1: DMatrix<f64>,
    z2: DMatrix<f64>,
    o1: DMatrix<f64>,
    o2: DMatrix<f64>,
    s: DMatrix<f64>,
}

impl Blocks {
    fn direct_sum(&self, other: &Blocks) -> Blocks {
        Blocks {
            z1: block_diag(&self.z1, &other.z1),
            z2: block_diag(&self.z2, &other.z2),
            o1: block_diag(&self.o1, &other.o1),
            o2: block_diag(&self.o2, &other.o2),
            s: block_diag(&self.s, &other.s),
        }
    }
}

fn check_distinct_nonzero(t: &[f64]) -> Result<()> {
    if t.iter().any(|v| !v.is_finite() || *v == 0.0) {
        return Err(Error::Invalid(format!("parameters must be finite and non-zero, got {t:?}")));
    }
    for (p, a) in t.iter().enumerate() {
        if t[p + 1..].contains(a) {
            return Err(Error::Invalid(format!("parameters must be pairwise distinct, got {t:?}")));
        }
    }
    Ok(())
}

/// `Z_1 = diag(t)`, `Z_2` pairs coordinates `(2i, 2i+1)`; needs `sum t = 0` and
/// opposite signs inside each pair so that `S^0 = diag(|t_2|, |t_1|, ...)` is SPD.
fn even_blocks(t: &[f64]) -> Result<Blocks> {
    let n = t.len();
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::Invalid(format!("even construction needs an even number of parameters, got {n}")));
    }
    check_distinct_nonzero(t)?;
    let scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if t.iter().sum::<f64>().abs() > 1e-12 * scale {
        return Err(Error::Invalid(format!("parameters must sum to zero, got {t:?}")));
    }
    let mut z2 = DMatrix::zeros(n, n);
    let mut o1 = DMatrix::zeros(n, n);
    let mut s = DMatrix::zeros(n, n);
    for b in 0..n / 2 {
        let (a, c) = (t[2 * b], t[2 * b + 1]);
        if a * c >= 0.0 {
            return Err(Error::Invalid(format!("parameters {a} and {c} of one pair must have opposite signs")));
        }
        let r = 2 * b;
        z2.view_mut((r, r), (2, 2)).copy_from(&j2());
        o1.view_mut((r, r), (2, 2)).copy_from(&rot2(a.signum()));
        s[(r, r)] = c.abs();
        s[(r + 1, r + 1)] = a.abs();
    }
    Ok(Blocks {
        z1: DMatrix::from_diagonal(&DVector::from_column_slice(t)),
        z2,
        o1,
        o2: DMatrix::zeros(n, n),
        s,
    })
}

/// Three-dimensional construction: `u_4 = x_1 x_2 + x_2 x_3`, `u_5 = sum x_i^2 / (2 t_i)`
/// with `sum 1/t_i = 0`.
fn odd3_blocks(t: &[f64]) -> Result<Blocks> {
    if t.len() != 3 {
        return Err(Error::Invalid(format!("odd construction needs three parameters, got {}", t.len())));
    }
    check_distinct_nonzero(t)?;
    let recip: f64 = t.iter().map(|v| 1.0 / v).sum();
    let scale = t.iter().fold(0.0f64, |m, v| m.max(1.0 / v.abs()));
    if recip.abs() > 1e-12 * scale {
        return Err(Error::Invalid(format!("reciprocals of {t:?} must sum to zero")));
    }
    let off = (t[2] + 1.0) / 2.0;
    Ok(Blocks {
        z1: DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]),
        z2: DMatrix::from_diagonal(&DVector::from_iterator(3, t.iter().map(|v| 1.0 / v))),
        o1: DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        o2: DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0]),
        s: DMatrix::from_row_slice(3, 3, &[t[0], 0.0, off, 0.0, -t[1] - 1.0, 0.0, off, 0.0, 1.0]),
    })
}

fn blocks_for(n: usize, t: &[f64]) -> Result<Blocks> {
    if t.len() != n {
        return Err(Error::Invalid(format!("expected {n} parameters, got {}", t.len())));
    }
    match n {
        0 | 1 => Err(Error::Invalid("constant construction needs dimension at least 2".into())),
        3 => odd3_blocks(t),
        n if n % 2 == 0 => even_blocks(t),
        n => Ok(even_blocks(&t[..n - 3])?.direct_sum(&odd3_blocks(&t[n - 3..])?)),
    }
}

/// Constant conductivity `gamma_0` with `u_i = x_i` and two quadratic solutions
/// `u_{n+k} = x^T gamma_0^{-1/2} Z_k^0 gamma_0^{-1/2} x / 2`.
///
/// `t` parametrizes `Z^0`: for even `n` (`diag(t)`, pairs of opposite sign, `sum t = 0`),
/// for `n = 3` (`diag(1/t)`, `sum 1/t = 0`), and the direct sum of both for odd `n >= 5`.
pub fn constant_case(gamma0: &DMatrix<f64>, t: &[f64]) -> Result<AnalyticCase> {
    let n = gamma0.nrows();
    if gamma0.ncols() != n {
        return Err(Error::Shape("conductivity must be square".into()));
    }
    let blocks = blocks_for(n, t)?;
    let (root, inv_root) = spd_sqrt(gamma0)?;
    let conj_in = |m: &DMatrix<f64>| &inv_root * m * &inv_root;
    let conj_out = |m: &DMatrix<f64>| &root * m * &root;
    let zk = [conj_in(&blocks.z1), conj_in(&blocks.z2)];
    let mut solutions: Vec<Solution> = (0..n)
        .map(|i| Solution {
            u: Arc::new(move |x: &[f64]| x[i]) as ScalarFn,
            grad: Arc::new(move |x: &[f64]| {
                let mut e = DVector::zeros(x.len());
                e[i] = 1.0;
                e
            }) as VectorFn,
            hessian: Some(constant_fn(DMatrix::zeros(n, n))),
        })
        .collect();
    for m in &zk {
        let (mu, mg) = (m.clone(), m.clone());
        solutions.push(Solution {
            u: Arc::new(move |x| {
                let v = vec_of(x);
                0.5 * v.dot(&(&mu * &v))
            }),
            grad: Arc::new(move |x| &mg * vec_of(x)),
            hessian: Some(constant_fn(m.clone())),
        });
    }
    let structure = Structure {
        z: zk.iter().cloned().map(constant_fn).collect(),
        h: constant_fn(gamma0.clone()),
        omega1: constant_fn(conj_out(&blocks.o1)),
        omega2: constant_fn(conj_out(&blocks.o2)),
        s: constant_fn(conj_out(&blocks.s)),
    };
    let case = AnalyticCase {
        name: format!("constant-{n}d"),
        n,
        gamma: constant_fn(gamma0.clone()),
        div_gamma: Some(Arc::new(move |_| DVector::zeros(n))),
        solutions,
        structure: Some(structure),
        params: CaseParams::Constant {
            gamma0: gamma0.clone(),
            t: t.to_vec(),
        },
        domain: (-1.0, 1.0),
    };
    case.verify_pde()?;
    Ok(case)
}

fn unit_frame(k: &[f64], k_perp: &[f64]) -> Result<()> {
    let (a, b) = (vec_of(k), vec_of(k_perp));
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape("frame vectors must share a dimension of at least 2".into()));
    }
    if (a.norm() - 1.0).abs() > 1e-12 || (b.norm() - 1.0).abs() > 1e-12 || a.dot(&b).abs() > 1e-12 {
        return Err(Error::Invalid("k and k_perp must be orthonormal".into()));
    }
    Ok(())
}

/// Real and imaginary parts of `exp(rho (k + i k_perp) . x) / sqrt(beta)` for constant `beta`.
pub fn cgo_pair(beta: f64, rho: f64, k: &[f64], k_perp: &[f64]) -> Result<AnalyticCase> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Invalid(format!("beta must be positive, got {beta}")));
    }
    if !rho.is_finite() {
        return Err(Error::Invalid("rho must be finite".into()));
    }
    unit_frame(k, k_perp)?;
    let n = k.len();
    let (kv, pv) = (vec_of(k), vec_of(k_perp));
    let scale = 1.0 / beta.sqrt();
    let phase = {
        let (kv, pv) = (kv.clone(), pv.clone());
        move |x: &[f64]| {
            let x = vec_of(x);
            (rho * kv.dot(&x), rho * pv.dot(&x))
        }
    };
    let sym_kk = &kv * kv.transpose() - &pv * pv.transpose();
    let sym_kp = &kv * pv.transpose() + &pv * kv.transpose();
    let mut solutions = Vec::new();
    for imaginary in [false, true] {
        let (ph_u, ph_g, ph_h) = (phase.clone(), phase.clone(), phase.clone());
        let (kv, pv) = (kv.clone(), pv.clone());
        let (skk, skp) = (sym_kk.clone(), sym_kp.clone());
        solutions.push(Solution {
            u: Arc::new(move |x| {
                let (a, th) = ph_u(x);
                scale * a.exp() * if imaginary { th.sin() } else { th.cos() }
            }),
            grad: Arc::new(move |x| {
                let (a, th) = ph_g(x);
                let (s, c) = th.sin_cos();
                let v = if imaginary { &kv * s + &pv * c } else { &kv * c - &pv * s };
                v * (rho * scale * a.exp())
            }),
            hessian: Some(Arc::new(move |x| {
                let (a, th) = ph_h(x);
                let (s, c) = th.sin_cos();
                let m = if imaginary { &skk * s + &skp * c } else { &skk * c - &skp * s };
                m * (rho * rho * scale * a.exp())
            })),
        });
    }
    let case = AnalyticCase {
        name: format!("cgo-{n}d"),
        n,
        gamma: constant_fn(DMatrix::identity(n, n) * beta),
        div_gamma: Some(Arc::new(move |_| DVector::zeros(n))),
        solutions,
        structure: None,
        params: CaseParams::Cgo {
            beta,
            rho,
            k: k.to_vec(),
            k_perp: k_perp.to_vec(),
        },
        domain: (-0.5, 0.5),
    };
    case.verify_pde()?;
    Ok(case)
}

/// `|grad u_1|^2 |grad u_2|^2 - (grad u_1 . grad u_2)^2` of the CGO pair: `rho^4 exp(4 rho k.x) / beta^2`.
pub fn cgo_gradient_f1(beta: f64, rho: f64, k: &[f64], x: &[f64]) -> f64 {
    let kx: f64 = k.iter().zip(x).map(|(a, b)| a * b).sum();
    rho.powi(4) * (4.0 * rho * kx).exp() / (beta * beta)
}

/// `beta = exp(x_1 + x_2)` in 2D with solutions `exp(-x_1) -+ exp(-x_2)`, `x_1 - x_2`
/// and `exp(a x_1 + b x_2)` on the circle `(a + 1/2)^2 + (b + 1/2)^2 = 1/2`.
pub fn isotropic_exponential(theta: f64) -> Result<AnalyticCase> {
    let a = -0.5 + FRAC_1_SQRT_2 * theta.cos();
    let b = -0.5 + FRAC_1_SQRT_2 * theta.sin();
    let beta = |x: &[f64]| (x[0] + x[1]).exp();
    let mut solutions = Vec::new();
    for sign in [-1.0, 1.0] {
        solutions.push(Solution {
            u: Arc::new(move |x: &[f64]| (-x[0]).exp() + sign * (-x[1]).exp()),
            grad: Arc::new(move |x: &[f64]| DVector::from_vec(vec![-(-x[0]).exp(), -sign * (-x[1]).exp()])),
            hessian: Some(Arc::new(move |x: &[f64]| {
                DMatrix::from_row_slice(2, 2, &[(-x[0]).exp(), 0.0, 0.0, sign * (-x[1]).exp()])
            })),
        });
    }
    solutions.push(Solution {
        u: Arc::new(|x: &[f64]| x[0] - x[1]),
        grad: Arc::new(|_: &[f64]| DVector::from_vec(vec![1.0, -1.0])),
        hessian: Some(constant_fn(DMatrix::zeros(2, 2))),
    });
    solutions.push(Solution {
        u: Arc::new(move |x: &[f64]| (a * x[0] + b * x[1]).exp()),
        grad: Arc::new(move |x: &[f64]| DVector::from_vec(vec![a, b]) * (a * x[0] + b * x[1]).exp()),
        hessian: Some(Arc::new(move |x: &[f64]| {
            DMatrix::from_row_slice(2, 2, &[a * a, a * b, a * b, b * b]) * (a * x[0] + b * x[1]).exp()
        })),
    });
    let case = AnalyticCase {
        name: "isotropic-exponential-2d".into(),
        n: 2,
        gamma: Arc::new(move |x| DMatrix::identity(2, 2) * beta(x)),
        div_gamma: Some(Arc::new(move |x| DVector::from_element(2, beta(x)))),
        solutions,
        structure: None,
        params: CaseParams::IsotropicExponential { a, b },
        domain: (-0.5, 0.5),
    };
    case.verify_pde()?;
    Ok(case)
}

/// Names accepted by [`catalog`].
pub const CATALOG: &[&str] = &[
    "constant-identity-2d",
    "constant-spd-2d",
    "odd-3d-t623",
    "cgo-2d",
    "isotropic-exponential-2d",
    "warped-spd-2d",
];

pub fn spd_example_2d() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])
}

pub fn catalog(name: &str) -> Result<AnalyticCase> {
    let mut case = match name {
        "constant-identity-2d" => constant_case(&DMatrix::identity(2, 2), &[1.0, -1.0])?,
        "constant-spd-2d" => constant_case(&spd_example_2d(), &[1.0, -1.0])?,
        "odd-3d-t623" => constant_case(&DMatrix::identity(3, 3), &[6.0, -2.0, 3.0])?,
        "cgo-2d" => cgo_pair(1.0, 2.0, &[1.0, 0.0], &[0.0, 1.0])?,
        "isotropic-exponential-2d" => isotropic_exponential(std::f64::consts::FRAC_PI_3)?,
        "warped-spd-2d" => constant_case(&spd_example_2d(), &[1.0, -1.0])?.push(&Diffeomorphism::warp(0.3)?)?,
        other => {
            return Err(Error::Invalid(format!(
                "unknown case '{other}', expected one of {}",
                CATALOG.join(", ")
            )))
        }
    };
    case.name = name.to_string();
    Ok(case)
}

impl AnalyticCase {
    pub fn grid(&self, nodes: usize) -> Result<Grid> {
        Grid::uniform(self.n, nodes, self.domain.0, self.domain.1)
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.dim() != self.n {
            return Err(Error::Shape(format!("case is {}-dimensional, grid is {}-dimensional", self.n, grid.dim())));
        }
        Ok(())
    }

    /// Largest relative residual of `div(gamma grad u) = div(gamma) . grad u + gamma : D^2 u`
    /// over seeded random points, for the solutions carrying second derivatives.
    pub fn pde_residual(&self) -> Option<f64> {
        let dg = self.div_gamma.as_ref()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (lo, hi) = self.domain;
        let mut worst: Option<f64> = None;
        for _ in 0..PDE_SAMPLES {
            let x: Vec<f64> = (0..self.n).map(|_| rng.random_range(lo..=hi)).collect();
            let g = (self.gamma)(&x);
            let d = dg(&x);
            for sol in &self.solutions {
                let Some(hess) = &sol.hessian else { continue };
                let hm = hess(&x);
                let du = (sol.grad)(&x);
                let principal = g.component_mul(&hm).sum();
                let drift = d.dot(&du);
                let scale = 1.0 + g.norm() * hm.norm() + d.norm() * du.norm();
                let r = (principal + drift).abs() / scale;
                worst = Some(worst.map_or(r, |w: f64| w.max(r)));
            }
        }
        worst
    }

    fn verify_pde(&self) -> Result<()> {
        if let Some(r) = self.pde_residual() {
            if !(r <= PDE_TOL) {
                return Err(Error::Invalid(format!("case '{}' violates the conductivity equation (residual {r:e})", self.name)));
            }
        }
        Ok(())
    }

    pub fn gamma_field(&self, grid: &Grid) -> Result<MatrixField> {
        self.check_grid(grid)?;
        let g = self.gamma.clone();
        Ok(MatrixField::from_fn(grid, move |x| g(x)))
    }

    pub fn conductivity(&self, grid: &Grid) -> Result<ConductivityField> {
        ConductivityField::new(self.gamma_field(grid)?)
    }

    pub fn potentials(&self, grid: &Grid) -> Result<Vec<ScalarField>> {
        self.check_grid(grid)?;
        Ok(self.solutions.iter().map(|s| ScalarField::from_fn(grid, |x| (s.u)(x))).collect())
    }

    pub fn gradients(&self, grid: &Grid) -> Result<Vec<VectorField>> {
        self.check_grid(grid)?;
        Ok(self
            .solutions
            .iter()
            .map(|s| VectorField::from_fn(grid, |x| (s.grad)(x).iter().copied().collect()))
            .collect())
    }

    /// Dirichlet traces of the first `n` solutions.
    pub fn boundary_conditions(&self, grid: &Grid) -> Result<Vec<BoundaryCondition>> {
        Ok(self.potentials(grid)?.iter().take(self.n).map(BoundaryCondition::trace).collect())
    }

    /// Exact currents `H_i = gamma grad u_i` sampled on `grid`.
    pub fn measurements(&self, grid: &Grid) -> Result<MeasurementSet> {
        let gamma = self.conductivity(grid)?;
        let potentials = self.potentials(grid)?;
        let gradients = self.gradients(grid)?;
        synthesize_measurements(
            &gamma,
            Sources::Analytic {
                potentials: &potentials,
                gradients: &gradients,
            },
            &SolverConfig::default(),
        )
    }

    /// Currents from forward solves with the exact solutions' boundary traces.
    pub fn numeric_measurements(&self, grid: &Grid, cfg: &SolverConfig) -> Result<MeasurementSet> {
        let gamma = self.conductivity(grid)?;
        let bcs: Vec<BoundaryCondition> = self.potentials(grid)?.iter().map(BoundaryCondition::trace).collect();
        synthesize_measurements(&gamma, Sources::Boundary(&bcs), cfg)
    }

    fn structure_field(&self, grid: &Grid, pick: impl Fn(&Structure) -> &MatrixFn) -> Result<Option<MatrixField>> {
        self.check_grid(grid)?;
        Ok(self.structure.as_ref().map(|s| {
            let f = pick(s).clone();
            MatrixField::from_fn(grid, move |x| f(x))
        }))
    }

    pub fn omega_fields(&self, grid: &Grid) -> Result<Option<(MatrixField, MatrixField)>> {
        let o1 = self.structure_field(grid, |s| &s.omega1)?;
        let o2 = self.structure_field(grid, |s| &s.omega2)?;
        Ok(o1.zip(o2))
    }

    pub fn expected_s(&self, grid: &Grid) -> Result<Option<MatrixField>> {
        self.structure_field(grid, |s| &s.s)
    }

    pub fn expected_z(&self, grid: &Grid) -> Result<Option<Vec<MatrixField>>> {
        self.check_grid(grid)?;
        Ok(self.structure.as_ref().map(|s| {
            s.z.iter()
                .map(|f| {
                    let f = f.clone();
                    MatrixField::from_fn(grid, move |x| f(x))
                })
                .collect()
        }))
    }

    /// All sampled objects, as consumed by [`push_forward`].
    pub fn field_bundle(&self, grid: &Grid) -> Result<FieldBundle> {
        let m = self.measurements(grid)?;
        Ok(FieldBundle {
            gamma: self.gamma_field(grid)?,
            potentials: self.potentials(grid)?,
            currents: m.currents().to_vec(),
            z: self.expected_z(grid)?.unwrap_or_default(),
            omegas: self.omega_fields(grid)?,
            s: self.expected_s(grid)?,
        })
    }

    /// Exact push-forward of the case: every object is evaluated at `Psi^{-1}(y)`
    /// and transformed by the chain rule.
    pub fn push(&self, psi: &Diffeomorphism) -> Result<AnalyticCase> {
        if psi.n != self.n {
            return Err(Error::Shape("map and case dimensions differ".into()));
        }
        let psi = Arc::new(psi.clone());
        let gamma = self.gamma.clone();
        let p = psi.clone();
        let pushed_gamma: MatrixFn = Arc::new(move |y| {
            let x = p.inverse(y);
            let d = p.jacobian(&x);
            &d * gamma(&x) * d.transpose() / d.determinant().abs()
        });
        let solutions = self
            .solutions
            .iter()
            .map(|s| {
                let (u, grad) = (s.u.clone(), s.grad.clone());
                let (p1, p2) = (psi.clone(), psi.clone());
                Solution {
                    u: Arc::new(move |y| u(&p1.inverse(y))),
                    grad: Arc::new(move |y| {
                        let x = p2.inverse(y);
                        p2.jacobian(&x).transpose().try_inverse().expect("diffeomorphism") * grad(&x)
                    }),
                    hessian: None,
                }
            })
            .collect();
        let structure = self.structure.as_ref().map(|st| {
            let congruence = |f: &MatrixFn, det_power: i32| -> MatrixFn {
                let (f, p) = (f.clone(), psi.clone());
                Arc::new(move |y| {
                    let x = p.inverse(y);
                    let d = p.jacobian(&x);
                    &d * f(&x) * d.transpose() * d.determinant().abs().powi(det_power)
                })
            };
            let dual = |f: &MatrixFn| -> MatrixFn {
                let (f, p) = (f.clone(), psi.clone());
                Arc::new(move |y| {
                    let x = p.inverse(y);
                    p.jacobian(&x).transpose().try_inverse().expect("diffeomorphism") * f(&x)
                })
            };
            let h = {
                let (f, p) = (st.h.clone(), psi.clone());
                Arc::new(move |y: &[f64]| {
                    let x = p.inverse(y);
                    let d = p.jacobian(&x);
                    &d * f(&x) / d.determinant().abs()
                }) as MatrixFn
            };
            Structure {
                z: st.z.iter().map(dual).collect(),
                h,
                omega1: congruence(&st.omega1, 0),
                omega2: congruence(&st.omega2, 1),
                s: congruence(&st.s, 0),
            }
        });
        let domain = match psi.kind {
            MapKind::Scaling(s) => (self.domain.0 * s, self.domain.1 * s),
            _ => self.domain,
        };
        Ok(AnalyticCase {
            name: format!("{}-{}", self.name, psi.name()),
            n: self.n,
            gamma: pushed_gamma,
            div_gamma: None,
            solutions,
            structure,
            params: CaseParams::Pushed {
                base: Box::new(self.params.clone()),
                map: psi.name(),
            },
            domain,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapKind {
    Identity,
    /// `x -> s x`.
    Scaling(f64),
    /// `x -> x + a (sin x_2, sin x_1)` in 2D, `|a| < 1`.
    Warp(f64),
}

/// A diffeomorphism `Psi` with inverse, Jacobian and the uniform bound
/// `C^{-1} <= |det D Psi| <= C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Diffeomorphism {
    pub n: usize,
    pub kind: MapKind,
}

impl Diffeomorphism {
    pub fn identity(n: usize) -> Diffeomorphism {
        Diffeomorphism { n, kind: MapKind::Identity }
    }

    pub fn scaling(n: usize, s: f64) -> Result<Diffeomorphism> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Invalid(format!("scaling factor must be positive, got {s}")));
        }
        Ok(Diffeomorphism { n, kind: MapKind::Scaling(s) })
    }

    pub fn warp(a: f64) -> Result<Diffeomorphism> {
        if !(a.abs() < 1.0) {
            return Err(Error::Invalid(format!("warp amplitude must satisfy |a| < 1, got {a}")));
        }
        Ok(Diffeomorphism { n: 2, kind: MapKind::Warp(a) })
    }

    pub fn name(&self) -> String {
        match self.kind {
            MapKind::Identity => "identity".into(),
            MapKind::Scaling(s) => format!("scale{s}"),
            MapKind::Warp(a) => format!("warp{a}"),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            MapKind::Identity => x.to_vec(),
            MapKind::Scaling(s) => x.iter().map(|v| v * s).collect(),
            MapKind::Warp(a) => vec![x[0] + a * x[1].sin(), x[1] + a * x[0].sin()],
        }
    }

    /// `Psi^{-1}(y)`; Newton iteration for the warp.
    pub fn inverse(&self, y: &[f64]) -> Vec<f64> {
        match self.kind {
            MapKind::Identity => y.to_vec(),
            MapKind::Scaling(s) => y.iter().map(|v| v / s).collect(),
            MapKind::Warp(_) => {
                let mut x = DVector::from_column_slice(y);
                for _ in 0..50 {
                    let r = vec_of(&self.apply(x.as_slice())) - vec_of(y);
                    if r.amax() < 1e-15 {
                        break;
                    }
                    let d = self.jacobian(x.as_slice());
                    x -= d.lu().solve(&r).expect("warp Jacobian is invertible");
                }
                x.as_slice().to_vec()
            }
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        match self.kind {
            MapKind::Identity => DMatrix::identity(self.n, self.n),
            MapKind::Scaling(s) => DMatrix::identity(self.n, self.n) * s,
            MapKind::Warp(a) => DMatrix::from_row_slice(2, 2, &[1.0, a * x[1].cos(), a * x[0].cos(), 1.0]),
        }
    }

    pub fn jacobian_det(&self, x: &[f64]) -> f64 {
        self.jacobian(x).determinant()
    }

    /// Constant `C` with `C^{-1} <= |det D Psi| <= C` everywhere.
    pub fn bound(&self) -> f64 {
        match self.kind {
            MapKind::Identity => 1.0,
            MapKind::Scaling(s) => s.powi(self.n as i32).max(s.powi(-(self.n as i32))),
            MapKind::Warp(a) => 1.0 / (1.0 - a * a),
        }
    }

    /// Check the Jacobian bound and the round trip `Psi(Psi^{-1}(y)) = y` on grid nodes.
    pub fn validate_on(&self, grid: &Grid) -> Result<()> {
        if grid.dim() != self.n {
            return Err(Error::Shape("map and grid dimensions differ".into()));
        }
        let c = self.bound();
        for i in 0..grid.len() {
            let y = grid.point(i);
            let x = self.inverse(&y);
            let back = self.apply(&x);
            let err = back.iter().zip(&y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if err > 1e-12 * scale {
                return Err(Error::Invalid(format!("inverse map round trip fails at node {i} (error {err:e})")));
            }
            let j = self.jacobian_det(&x).abs();
            if !(j >= 1.0 / c * (1.0 - 1e-12) && j <= c * (1.0 + 1e-12)) {
                return Err(Error::Invalid(format!("Jacobian {j} violates the bound {c} at node {i}")));
            }
        }
        Ok(())
    }
}

/// Sampled objects transported by [`push_forward`].
#[derive(Debug, Clone)]
pub struct FieldBundle {
    pub gamma: MatrixField,
    pub potentials: Vec<ScalarField>,
    pub currents: Vec<VectorField>,
    pub z: Vec<MatrixField>,
    pub omegas: Option<(MatrixField, MatrixField)>,
    pub s: Option<MatrixField>,
}

#[derive(Debug, Clone)]
pub struct PushedBundle {
    pub fields: FieldBundle,
    /// Target nodes outside `Psi(X)`; they hold NaN.
    pub uncovered: usize,
}

impl PushedBundle {
    /// Measurement set from the transported currents; fails on masked nodes.
    pub fn measurements(&self) -> Result<MeasurementSet> {
        MeasurementSet::new(
            self.fields.currents.clone(),
            self.fields.potentials.iter().map(BoundaryCondition::trace).collect(),
            Provenance::Numeric,
        )
    }
}

/// Transport every field of `b` under `Psi` onto `target` by multilinear interpolation at `Psi^{-1}(y)`.
///
/// `gamma -> |J|^{-1} D gamma D^T`, `u -> u o Psi^{-1}`, `H -> |J|^{-1} D H`, `Z -> D^{-T} Z`,
/// `Omega_1 -> D Omega_1 D^T`, `Omega_2 -> |J| D Omega_2 D^T`, `S -> D S D^T`.
/// Target nodes whose preimage leaves the source grid are masked with NaN
/// when `allow_mask` is set and are an error otherwise.
pub fn push_forward(b: &FieldBundle, psi: &Diffeomorphism, target: &Grid, allow_mask: bool) -> Result<PushedBundle> {
    let src = b.gamma.grid();
    if target.dim() != src.dim() || psi.n != src.dim() {
        return Err(Error::Shape("map, source and target dimensions differ".into()));
    }
    let n = src.dim();
    let pre: Vec<Vec<f64>> = (0..target.len()).map(|i| psi.inverse(&target.point(i))).collect();
    let covered: Vec<bool> = pre.iter().map(|x| src.contains(x)).collect();
    let uncovered = covered.iter().filter(|c| !**c).count();
    if uncovered == target.len() || (uncovered > 0 && !allow_mask) {
        return Err(Error::Uncovered {
            uncovered,
            total: target.len(),
        });
    }
    let jac: Vec<DMatrix<f64>> = pre.iter().map(|x| psi.jacobian(x)).collect();
    let nan_m = DMatrix::from_element(n, n, f64::NAN);
    type Rule<'a> = &'a (dyn Fn(&DMatrix<f64>, DMatrix<f64>) -> DMatrix<f64> + Sync);
    let matrix = |f: &MatrixField, rule: Rule<'_>| {
        MatrixField::from_nodes(target, |i| match f.interpolate(&pre[i]) {
            Some(m) if covered[i] => rule(&jac[i], m),
            _ => nan_m.clone(),
        })
    };
    let absdet = |d: &DMatrix<f64>| d.determinant().abs();
    let gamma = matrix(&b.gamma, &|d, m| d * m * d.transpose() / absdet(d));
    let potentials = b
        .potentials
        .iter()
        .map(|u| {
            let data = (0..target.len())
                .map(|i| if covered[i] { u.interpolate(&pre[i]).unwrap_or(f64::NAN) } else { f64::NAN })
                .collect();
            ScalarField::new(target.clone(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    let currents = b
        .currents
        .iter()
        .map(|h| {
            VectorField::from_nodes(target, |i| match h.interpolate(&pre[i]) {
                Some(v) if covered[i] => &jac[i] * DVector::from_vec(v) / absdet(&jac[i]),
                _ => DVector::from_element(n, f64::NAN),
            })
        })
        .collect();
    let z = b
        .z
        .iter()
        .map(|z| matrix(z, &|d, m| d.transpose().try_inverse().unwrap_or_else(|| nan_m.clone()) * m))
        .collect();
    let omegas = b.omegas.as_ref().map(|(o1, o2)| {
        (
            matrix(o1, &|d, m| d * m * d.transpose()),
            matrix(o2, &|d, m| d * m * d.transpose() * absdet(d)),
        )
    });
    let s = b.s.as_ref().map(|s| matrix(s, &|d, m| d * m * d.transpose()));
    Ok(PushedBundle {
        fields: FieldBundle {
            gamma,
            potentials,
            currents,
            z,
            omegas,
            s,
        },
        uncovered,
    })
}
