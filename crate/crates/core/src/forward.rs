//! Forward conductivity problem, current densities and measurement synthesis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conductivity::ConductivityField;
use crate::error::{Error, Result};
use crate::field::{gradient, vector_gradient, Grid, MatrixField, ScalarField, VectorField};
use crate::sparse::{banded_solve, conjugate_gradient, CsrMatrix, SolveStats};

/// Dirichlet data on the boundary nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    // full-length field; interior entries are zero and ignored
    values: ScalarField,
}

impl BoundaryCondition {
    pub fn from_fn<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        BoundaryCondition::trace(&ScalarField::from_fn(grid, f))
    }

    /// Boundary values of a field.
    pub fn trace(u: &ScalarField) -> Self {
        let g = u.grid();
        let data = (0..g.len())
            .map(|i| if g.is_boundary(i) { u.get(i) } else { 0.0 })
            .collect();
        BoundaryCondition {
            values: ScalarField::new(g.clone(), data).expect("length preserved"),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.values.grid()
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values.get(node)
    }

    /// Field equal to the boundary data on the boundary and zero inside.
    pub fn as_field(&self) -> &ScalarField {
        &self.values
    }

    pub fn check_finite(&self) -> Result<()> {
        self.values.check_finite("boundary condition")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    ConjugateGradient,
    Direct,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub solver: SolverKind,
    /// Relative residual target of the iterative solvers.
    pub tol: f64,
    pub max_iter: usize,
    /// Right-hand side `f` of `div(gamma grad u) = f`; manufactured-solution tests only.
    pub source: Option<ScalarField>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            solver: SolverKind::ConjugateGradient,
            tol: 1e-10,
            max_iter: 50_000,
            source: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Invalid("solver tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Coefficients of `-div(K grad u)` at an interior node as `(node, weight)` pairs.
///
/// Axis terms use arithmetic face averages of `K_aa`; mixed terms use the
/// cross stencil `d_a(K_ab d_b u)` with `K_ab` sampled at `x +- e_a`. The
/// resulting matrix is symmetric for symmetric `K` and exact for constant `K`
/// and quadratic `u`.
pub(crate) fn conservative_stencil(k: &MatrixField, node: usize) -> Vec<(usize, f64)> {
    let g = k.grid();
    let n = g.dim();
    let mut out = Vec::with_capacity(1 + 2 * n + 4 * n * (n - 1));
    let mut center = 0.0;
    for a in 0..n {
        let s = g.stride(a);
        let h2 = g.spacing()[a].powi(2);
        let kp = 0.5 * (k.entry(node, a, a) + k.entry(node + s, a, a));
        let km = 0.5 * (k.entry(node, a, a) + k.entry(node - s, a, a));
        out.push((node + s, -kp / h2));
        out.push((node - s, -km / h2));
        center += (kp + km) / h2;
        for b in 0..n {
            if a == b {
                continue;
            }
            let sb = g.stride(b);
            let w = 1.0 / (4.0 * g.spacing()[a] * g.spacing()[b]);
            let kp = k.entry(node + s, a, b) * w;
            let km = k.entry(node - s, a, b) * w;
            out.push((node + s + sb, -kp));
            out.push((node + s - sb, kp));
            out.push((node - s + sb, km));
            out.push((node - s - sb, -km));
        }
    }
    out.push((node, center));
    out
}

/// Interior-node numbering used by the assembled systems.
#[derive(Debug, Clone)]
pub(crate) struct Unknowns {
    pub interior: Vec<usize>,
    // full node -> unknown index, usize::MAX on the boundary
    pub index: Vec<usize>,
}

impl Unknowns {
    pub fn new(grid: &Grid) -> Unknowns {
        let interior = grid.interior_nodes();
        let mut index = vec![usize::MAX; grid.len()];
        for (k, &i) in interior.iter().enumerate() {
            index[i] = k;
        }
        Unknowns { interior, index }
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }
}

/// Assemble `-div(gamma grad u) = -f` on interior nodes with Dirichlet data moved to the right-hand side.
pub fn assemble_conductivity(
    gamma: &MatrixField,
    g: &BoundaryCondition,
    source: Option<&ScalarField>,
) -> (CsrMatrix, Vec<f64>) {
    let grid = gamma.grid();
    let unk = Unknowns::new(grid);
    let mut trip = Vec::new();
    let mut rhs = vec![0.0; unk.len()];
    for (row, &node) in unk.interior.iter().enumerate() {
        if let Some(f) = source {
            rhs[row] = -f.get(node);
        }
        for (nb, w) in conservative_stencil(gamma, node) {
            match unk.index[nb] {
                usize::MAX => rhs[row] -= w * g.value(nb),
                col => trip.push((row, col, w)),
            }
        }
    }
    (CsrMatrix::from_triplets(unk.len(), unk.len(), trip), rhs)
}

pub(crate) fn solve_system(a: &CsrMatrix, b: &[f64], cfg: &SolverConfig, symmetric: bool) -> Result<(Vec<f64>, SolveStats)> {
    let (x, stats) = match cfg.solver {
        SolverKind::Direct => banded_solve(a, b)?,
        SolverKind::ConjugateGradient if symmetric => conjugate_gradient(a, b, cfg.tol, cfg.max_iter, false)?,
        SolverKind::ConjugateGradient => crate::sparse::bicgstab(a, b, cfg.tol, cfg.max_iter)?,
    };
    if !(stats.residual <= cfg.tol.max(1e-12)) {
        return Err(Error::Solver {
            iterations: stats.iterations,
            residual: stats.residual,
        });
    }
    Ok((x, stats))
}

#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub u: ScalarField,
    pub iterations: usize,
    /// Relative residual of the assembled linear system.
    pub residual: f64,
}

/// Solve `div(gamma grad u) = f` (default `f = 0`) with `u = g` on the boundary.
pub fn solve_conductivity(gamma: &ConductivityField, g: &BoundaryCondition, cfg: &SolverConfig) -> Result<ForwardSolution> {
    cfg.validate()?;
    g.check_finite()?;
    let grid = gamma.gamma().grid();
    if g.grid() != grid {
        return Err(Error::Shape("boundary condition and conductivity live on different grids".into()));
    }
    let (a, b) = assemble_conductivity(gamma.gamma(), g, cfg.source.as_ref());
    let (x, stats) = solve_system(&a, &b, cfg, true)?;
    let unk = Unknowns::new(grid);
    let mut u = g.as_field().clone();
    for (k, &node) in unk.interior.iter().enumerate() {
        u.set(node, x[k]);
    }
    Ok(ForwardSolution {
        u,
        iterations: stats.iterations,
        residual: stats.residual,
    })
}

/// `H = gamma grad u` node-wise.
pub fn current_density(gamma: &ConductivityField, u: &ScalarField) -> Result<VectorField> {
    crate::field::ops::check_same_grid(gamma.gamma().grid(), u.grid())?;
    Ok(gamma.gamma().apply(&gradient(u)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Numeric,
    /// Read from a file; no generating boundary data known.
    External,
}

/// How the perturbation of [`add_noise`] is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseNorm {
    /// `sup |p| + sup |grad p|` equals the level.
    W1Inf,
    /// `sup |p|` equals the level.
    Sup,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub level: f64,
    /// Standard deviation of the Gaussian mollifier, in nodes; `0` leaves white noise.
    pub radius: f64,
    pub seed: u64,
    pub norm: NoiseNorm,
}

impl NoiseSpec {
    pub fn new(level: f64, radius: f64, seed: u64) -> Self {
        NoiseSpec {
            level,
            radius,
            seed,
            norm: NoiseNorm::W1Inf,
        }
    }
}

/// Ordered current densities `H_1..H_{n+m}` on a common grid.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    grid: Grid,
    currents: Vec<VectorField>,
    /// Generating Dirichlet data, one per current when known.
    pub boundary: Vec<BoundaryCondition>,
    pub provenance: Provenance,
    pub noise: Option<NoiseSpec>,
}

impl MeasurementSet {
    pub fn new(currents: Vec<VectorField>, boundary: Vec<BoundaryCondition>, provenance: Provenance) -> Result<Self> {
        let grid = currents
            .first()
            .ok_or(Error::InsufficientSolutions { needed: 1, got: 0 })?
            .grid()
            .clone();
        let n = grid.dim();
        if currents.len() < n {
            return Err(Error::InsufficientSolutions {
                needed: n,
                got: currents.len(),
            });
        }
        if currents.iter().any(|h| h.grid() != &grid) || boundary.iter().any(|b| b.grid() != &grid) {
            return Err(Error::Shape("measurements live on different grids".into()));
        }
        if !boundary.is_empty() && boundary.len() != currents.len() {
            return Err(Error::Shape(format!(
                "{} boundary conditions for {} currents",
                boundary.len(),
                currents.len()
            )));
        }
        for h in &currents {
            h.check_finite("current density")?;
        }
        Ok(MeasurementSet {
            grid,
            currents,
            boundary,
            provenance,
            noise: None,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }

    /// Number of additional solutions `m` beyond the first `n`.
    pub fn extra(&self) -> usize {
        self.currents.len() - self.dim()
    }

    pub fn current(&self, i: usize) -> &VectorField {
        &self.currents[i]
    }

    pub fn currents(&self) -> &[VectorField] {
        &self.currents
    }

    /// `H = [H_1 | ... | H_n]`.
    pub fn h_matrix(&self) -> MatrixField {
        MatrixField::from_columns(&self.currents[..self.dim()]).expect("n currents on one grid")
    }

    /// Keep only the currents with the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Result<MeasurementSet> {
        let currents = idx.iter().map(|&i| self.currents[i].clone()).collect();
        let boundary = if self.boundary.is_empty() {
            Vec::new()
        } else {
            idx.iter().map(|&i| self.boundary[i].clone()).collect()
        };
        let mut out = MeasurementSet::new(currents, boundary, self.provenance)?;
        out.noise = self.noise;
        Ok(out)
    }
}

/// Where the solutions behind a measurement set come from.
pub enum Sources<'a> {
    /// Solve the forward problem for each Dirichlet datum.
    Boundary(&'a [BoundaryCondition]),
    /// Exact potentials and their gradients.
    Analytic {
        potentials: &'a [ScalarField],
        gradients: &'a [VectorField],
    },
}

pub fn synthesize_measurements(gamma: &ConductivityField, sources: Sources<'_>, cfg: &SolverConfig) -> Result<MeasurementSet> {
    match sources {
        Sources::Boundary(bcs) => {
            let mut currents = Vec::with_capacity(bcs.len());
            for g in bcs {
                let sol = solve_conductivity(gamma, g, cfg)?;
                currents.push(current_density(gamma, &sol.u)?);
            }
            MeasurementSet::new(currents, bcs.to_vec(), Provenance::Numeric)
        }
        Sources::Analytic { potentials, gradients } => {
            if potentials.len() != gradients.len() {
                return Err(Error::Shape("potentials and gradients differ in count".into()));
            }
            let currents = gradients.iter().map(|du| gamma.gamma().apply(du)).collect();
            let boundary = potentials.iter().map(BoundaryCondition::trace).collect();
            MeasurementSet::new(currents, boundary, Provenance::Analytic)
        }
    }
}

/// Discrete `W^{1,inf}` norm `max |p^k| + max |d_a p^k|`.
pub fn w1_inf_norm(p: &VectorField) -> f64 {
    p.max_abs() + vector_gradient(p).data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Discrete `H^1` norm with cell-volume quadrature.
pub fn h1_norm(p: &VectorField) -> f64 {
    let vol = p.grid().cell_volume();
    let l2: f64 = p.data().iter().map(|v| v * v).sum();
    let d: f64 = vector_gradient(p).data().iter().map(|v| v * v).sum();
    ((l2 + d) * vol).sqrt()
}

fn gaussian_kernel(radius: f64) -> Vec<f64> {
    let half = (3.0 * radius).ceil() as isize;
    (-half..=half)
        .map(|k| (-(k as f64).powi(2) / (2.0 * radius * radius)).exp())
        .collect()
}

/// Separable Gaussian smoothing of one scalar component, renormalized near the boundary.
fn mollify(grid: &Grid, data: &mut [f64], radius: f64) {
    if radius <= 0.0 {
        return;
    }
    let kernel = gaussian_kernel(radius);
    let half = (kernel.len() / 2) as isize;
    for axis in 0..grid.dim() {
        let s = grid.stride(axis);
        let len = grid.dims()[axis] as isize;
        let src = data.to_vec();
        for (i, out) in data.iter_mut().enumerate() {
            let c = grid.coord(i, axis) as isize;
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (k, w) in kernel.iter().enumerate() {
                let off = k as isize - half;
                let cc = c + off;
                if cc < 0 || cc >= len {
                    continue;
                }
                let j = (i as isize + off * s as isize) as usize;
                acc += w * src[j];
                wsum += w;
            }
            *out = acc / wsum;
        }
    }
}

/// Smooth pseudorandom perturbation of every current, scaled so its norm equals `spec.level`.
///
/// The white noise is drawn from a ChaCha stream seeded by `spec.seed`, one
/// current and component at a time, so the result is reproducible.
pub fn add_noise(m: &MeasurementSet, spec: &NoiseSpec) -> Result<MeasurementSet> {
    if !(spec.level >= 0.0) || !(spec.radius >= 0.0) {
        return Err(Error::Invalid("noise level and radius must be non-negative".into()));
    }
    let mut out = m.clone();
    if spec.level == 0.0 {
        return Ok(out);
    }
    let grid = m.grid().clone();
    let n = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for h in out.currents.iter_mut() {
        let mut comps = Vec::with_capacity(n);
        for _ in 0..n {
            let mut c: Vec<f64> = (0..grid.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            mollify(&grid, &mut c, spec.radius);
            comps.push(ScalarField::new(grid.clone(), c)?);
        }
        let p = VectorField::from_components(&comps)?;
        let norm = match spec.norm {
            NoiseNorm::W1Inf => w1_inf_norm(&p),
            NoiseNorm::Sup => p.max_abs(),
        };
        let scale = ScalarField::constant(&grid, spec.level / norm);
        *h = h.add(&p.scale(&scale));
    }
    out.noise = Some(*spec);
    Ok(out)
}
