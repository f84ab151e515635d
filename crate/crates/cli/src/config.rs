use std::fs::File;
use std::io::{self, BufReader};
use std::path::PathBuf;

use cdii_core::cases::{catalog, AnalyticCase};
use cdii_core::conductivity::ConductivityField;
use cdii_core::field::{Grid, MatrixField, Subdomain};
use cdii_core::forward::{
    add_noise, current_density, solve_conductivity, BoundaryCondition, MeasurementSet, NoiseSpec, Provenance, SolverConfig,
    SolverKind,
};
use cdii_core::recon::{Anchor, BetaMethod};
use clap::{Args, ValueEnum};

use crate::container::{Container, FieldData};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Cg,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BetaMethodArg {
    Integrate,
    Poisson,
    Both,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Analytic case to generate the input from, instead of reading a container
    #[arg(long)]
    pub case: Option<String>,
    /// Input container; `-` reads stdin
    #[arg(long, default_value = "-")]
    pub input: String,
    /// Nodes per axis for generated cases, e.g. 33x33 or 17x17x17
    #[arg(long)]
    pub grid: Option<String>,
    /// Grid spacing for generated cases (alternative to --grid)
    #[arg(long)]
    pub h: Option<f64>,
    /// Generate case currents by forward solves instead of sampling them exactly
    #[arg(long)]
    pub numeric: bool,
    /// Threshold for the two-solution, basis and invertibility checks
    #[arg(long, default_value_t = 1e-6)]
    pub c0: f64,
    /// Threshold for the codimension check
    #[arg(long, default_value_t = 1e-6)]
    pub c1: f64,
    /// Boundary layers excluded from the reconstruction box
    #[arg(long, default_value_t = 1)]
    pub margin: usize,
    /// Anchor point and value of beta: x0,y0[,z0],value
    #[arg(long)]
    pub anchor: Option<String>,
    /// Perturb the currents: level,radius,seed (W^{1,inf} level, smoothing radius in nodes)
    #[arg(long)]
    pub noise: Option<String>,
    /// Directory for summary.csv, result.cdii and heatmaps
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the result container to this path; `-` writes stdout
    #[arg(short = 'o', long)]
    pub emit: Option<String>,
    #[arg(long, value_enum, default_value_t = SolverArg::Cg)]
    pub solver: SolverArg,
    /// Relative residual target of the iterative solvers
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = BetaMethodArg::Integrate)]
    pub beta_method: BetaMethodArg,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Case {
        name: String,
        dims: Option<Vec<usize>>,
        h: Option<f64>,
        numeric: bool,
    },
    File(PathBuf),
    Stdin,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Emit {
    Stdout,
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct AnchorSpec {
    pub point: Vec<f64>,
    pub value: f64,
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub source: InputSource,
    pub margin: usize,
    pub c0: f64,
    pub c1: f64,
    pub anchor: Option<AnchorSpec>,
    pub noise: Option<NoiseSpec>,
    pub solver: SolverConfig,
    pub beta_method: BetaMethod,
    pub out_dir: Option<PathBuf>,
    pub emit: Option<Emit>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("{what}: '{t}' is not a number"))))
        .collect()
}

pub fn parse_grid(s: &str) -> Result<Vec<usize>, CliError> {
    let dims = s
        .split('x')
        .map(|t| t.trim().parse::<usize>().map_err(|_| usage(format!("--grid: '{t}' is not a node count"))))
        .collect::<Result<Vec<_>, _>>()?;
    if !(2..=3).contains(&dims.len()) {
        return Err(usage("--grid takes 2 or 3 node counts, e.g. 33x33"));
    }
    Ok(dims)
}

pub fn parse_noise(s: &str) -> Result<NoiseSpec, CliError> {
    match parse_list(s, "--noise")?[..] {
        [level, radius, seed] if level >= 0.0 && radius >= 0.0 && seed >= 0.0 && seed.fract() == 0.0 => {
            Ok(NoiseSpec::new(level, radius, seed as u64))
        }
        _ => Err(usage("--noise expects level,radius,seed with non-negative values and an integer seed")),
    }
}

pub fn parse_anchor(s: &str) -> Result<AnchorSpec, CliError> {
    let v = parse_list(s, "--anchor")?;
    if !(3..=4).contains(&v.len()) {
        return Err(usage("--anchor expects x0,y0[,z0],value"));
    }
    let (value, point) = v.split_last().expect("non-empty");
    if !(*value > 0.0) {
        return Err(usage("--anchor value must be positive"));
    }
    Ok(AnchorSpec {
        point: point.to_vec(),
        value: *value,
    })
}

impl ExperimentConfig {
    pub fn from_args(a: &CommonArgs) -> Result<ExperimentConfig, CliError> {
        if !(a.c0 > 0.0) || !(a.c1 > 0.0) {
            return Err(usage("--c0 and --c1 must be positive"));
        }
        if !(a.tol > 0.0) {
            return Err(usage("--tol must be positive"));
        }
        if a.grid.is_some() && a.h.is_some() {
            return Err(usage("give either --grid or --h, not both"));
        }
        if let Some(h) = a.h {
            if !(h > 0.0) {
                return Err(usage("--h must be positive"));
            }
        }
        let source = match &a.case {
            Some(name) => InputSource::Case {
                name: name.clone(),
                dims: a.grid.as_deref().map(parse_grid).transpose()?,
                h: a.h,
                numeric: a.numeric,
            },
            None if a.input == "-" => InputSource::Stdin,
            None => {
                let p = PathBuf::from(&a.input);
                if !p.exists() {
                    return Err(CliError::Io {
                        path: p,
                        source: io::Error::new(io::ErrorKind::NotFound, "input container does not exist"),
                    });
                }
                InputSource::File(p)
            }
        };
        let solver = SolverConfig {
            solver: match a.solver {
                SolverArg::Cg => SolverKind::ConjugateGradient,
                SolverArg::Direct => SolverKind::Direct,
            },
            tol: a.tol,
            ..Default::default()
        };
        Ok(ExperimentConfig {
            source,
            margin: a.margin,
            c0: a.c0,
            c1: a.c1,
            anchor: a.anchor.as_deref().map(parse_anchor).transpose()?,
            noise: a.noise.as_deref().map(parse_noise).transpose()?,
            solver,
            beta_method: match a.beta_method {
                BetaMethodArg::Integrate => BetaMethod::Integrate,
                BetaMethodArg::Poisson => BetaMethod::Poisson,
                BetaMethodArg::Both => BetaMethod::Both,
            },
            out_dir: a.out.clone(),
            emit: a.emit.as_deref().map(|e| if e == "-" { Emit::Stdout } else { Emit::File(e.into()) }),
        })
    }

    pub fn subdomain(&self, grid: &Grid) -> Result<Subdomain, CliError> {
        if grid.dims().iter().any(|&d| d < 2 * self.margin + 3) {
            return Err(usage(format!("--margin {} leaves fewer than 3 nodes on some axis", self.margin)));
        }
        Ok(Subdomain::shrunk(grid, self.margin))
    }
}

/// Inputs of a run: the raw container plus the views the commands need.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub container: Container,
    pub case: Option<AnalyticCase>,
}

impl Loaded {
    pub fn grid(&self) -> &Grid {
        self.container.grid()
    }

    /// Reference conductivity, when the input carries one.
    pub fn truth(&self) -> Result<Option<ConductivityField>, CliError> {
        match self.container.get("gamma") {
            Some(_) => Ok(Some(ConductivityField::new(self.container.matrix("gamma")?)?)),
            None => Ok(None),
        }
    }

    pub fn omegas(&self) -> Result<Option<(MatrixField, MatrixField)>, CliError> {
        match (self.container.get("omega1"), self.container.get("omega2")) {
            (Some(_), Some(_)) => Ok(Some((self.container.matrix("omega1")?, self.container.matrix("omega2")?))),
            _ => Ok(None),
        }
    }

    /// Dirichlet data: `g*` fields, else the traces of `u*` fields.
    pub fn boundary(&self) -> Result<Vec<BoundaryCondition>, CliError> {
        let c = &self.container;
        let g = c.numbered("g");
        if !g.is_empty() {
            return g.iter().map(|name| Ok(BoundaryCondition::trace(c.scalar(name)?))).collect();
        }
        c.numbered("u").iter().map(|name| Ok(BoundaryCondition::trace(c.scalar(name)?))).collect()
    }

    /// Currents `H*` with their boundary data when it matches in count.
    pub fn measurements(&self) -> Result<MeasurementSet, CliError> {
        let c = &self.container;
        let names = c.numbered("H");
        if names.is_empty() {
            return Err(usage("input has no current densities (fields H1, H2, ...)"));
        }
        let currents = names.iter().map(|n| c.vector(n).cloned()).collect::<Result<Vec<_>, _>>()?;
        let mut boundary = self.boundary()?;
        if boundary.len() != currents.len() {
            boundary.clear();
        }
        let provenance = match c.meta.get("provenance").map(String::as_str) {
            Some("analytic") => Provenance::Analytic,
            Some("numeric") => Provenance::Numeric,
            _ => Provenance::External,
        };
        Ok(MeasurementSet::new(currents, boundary, provenance)?)
    }

    /// Measurements with the configured noise applied.
    pub fn noisy_measurements(&self, cfg: &ExperimentConfig) -> Result<MeasurementSet, CliError> {
        let m = self.measurements()?;
        Ok(match &cfg.noise {
            Some(spec) => add_noise(&m, spec)?,
            None => m,
        })
    }
}

pub fn provenance_label(p: Provenance) -> &'static str {
    match p {
        Provenance::Analytic => "analytic",
        Provenance::Numeric => "numeric",
        Provenance::External => "external",
    }
}

fn case_grid(case: &AnalyticCase, dims: Option<&[usize]>, h: Option<f64>) -> Result<Grid, CliError> {
    let (lo, hi) = case.domain;
    let dims = match (dims, h) {
        (Some(d), _) => d.to_vec(),
        (None, Some(h)) => vec![((hi - lo) / h).round() as usize + 1; case.n],
        (None, None) => vec![if case.n == 3 { 17 } else { 33 }; case.n],
    };
    if dims.len() != case.n {
        return Err(usage(format!("case '{}' is {}-dimensional, --grid gives {} axes", case.name, case.n, dims.len())));
    }
    if dims.iter().any(|&d| d < 3) {
        return Err(usage("need at least 3 nodes per axis"));
    }
    let spacing = dims.iter().map(|&d| (hi - lo) / (d - 1) as f64).collect();
    Ok(Grid::new(dims, vec![lo; case.n], spacing)?)
}

/// Container holding an analytic case sampled on a grid.
pub fn case_container(case: &AnalyticCase, grid: &Grid, numeric: bool, solver: &SolverConfig) -> Result<Container, CliError> {
    let mut c = Container::new(grid.clone());
    let gamma = case.conductivity(grid)?;
    c.insert("gamma", FieldData::Matrix(gamma.gamma().clone()))?;
    let potentials = case.potentials(grid)?;
    for (k, u) in potentials.iter().enumerate() {
        let bc = BoundaryCondition::trace(u);
        let (u, h) = if numeric {
            let sol = solve_conductivity(&gamma, &bc, solver)?;
            let h = current_density(&gamma, &sol.u)?;
            (sol.u, h)
        } else {
            (u.clone(), gamma.gamma().apply(&case.gradients(grid)?[k]))
        };
        c.insert(format!("g{}", k + 1), FieldData::Scalar(bc.as_field().clone()))?;
        c.insert(format!("u{}", k + 1), FieldData::Scalar(u))?;
        c.insert(format!("H{}", k + 1), FieldData::Vector(h))?;
    }
    if let Some((o1, o2)) = case.omega_fields(grid)? {
        for (name, o) in [("omega1", o1), ("omega2", o2)] {
            let tf = cdii_core::field::TwoFormField::new(grid.clone(), o.data().to_vec())?;
            c.insert(name, FieldData::TwoForm(tf))?;
        }
    }
    c.meta.insert("case".into(), case.name.clone());
    c.meta.insert("provenance".into(), if numeric { "numeric" } else { "analytic" }.into());
    Ok(c)
}

pub fn load(cfg: &ExperimentConfig) -> Result<Loaded, CliError> {
    match &cfg.source {
        InputSource::Case { name, dims, h, numeric } => {
            let case = catalog(name)?;
            let grid = case_grid(&case, dims.as_deref(), *h)?;
            let container = case_container(&case, &grid, *numeric, &cfg.solver)?;
            Ok(Loaded {
                container,
                case: Some(case),
            })
        }
        InputSource::File(p) => {
            let f = File::open(p).map_err(CliError::io(p))?;
            let container = Container::read_from(BufReader::new(f))?;
            Ok(Loaded { container, case: None })
        }
        InputSource::Stdin => {
            let container = Container::read_from(io::stdin().lock())?;
            Ok(Loaded { container, case: None })
        }
    }
}

/// Anchor from `--anchor`, or the reference beta at the centre of the box.
pub fn resolve_anchor(
    cfg: &ExperimentConfig,
    grid: &Grid,
    sub: &Subdomain,
    truth: Option<&ConductivityField>,
) -> Result<Anchor, CliError> {
    if let Some(a) = &cfg.anchor {
        if a.point.len() != grid.dim() {
            return Err(usage(format!("--anchor needs {} coordinates", grid.dim())));
        }
        return Ok(Anchor::at_point(grid, &a.point, a.value)?);
    }
    let truth = truth.ok_or_else(|| usage("--anchor is required when the input has no reference conductivity"))?;
    let centre: Vec<usize> = sub.lo.iter().zip(&sub.hi).map(|(l, h)| (l + h) / 2).collect();
    let node = grid.index(&centre);
    Ok(Anchor::new(node, truth.beta().get(node))?)
}
