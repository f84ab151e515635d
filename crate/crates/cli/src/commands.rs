use std::fs;
use std::io::{self, Write};

use cdii_core::conductivity::ConductivityField;
use cdii_core::field::linalg::sym_dim;
use cdii_core::field::{MatrixField, ScalarField, Subdomain};
use cdii_core::forward::{add_noise, current_density, solve_conductivity, w1_inf_norm, MeasurementSet, NoiseSpec};
use cdii_core::global::global_pipeline;
use cdii_core::hypotheses::{check_hypotheses, first_failure, Hypothesis, HypothesisConfig, DET_THRESHOLD};
use cdii_core::recon::{curl_gamma_inverse, joint_pipeline, CurlResult, JointConfig, JointResult};
use clap::{Parser, Subcommand};

use crate::config::{load, provenance_label, resolve_anchor, CommonArgs, Emit, ExperimentConfig, Loaded};
use crate::container::{Container, FieldData};
use crate::error::CliError;
use crate::output::{write_heatmaps, Summary};

#[derive(Debug, Parser)]
#[command(name = "cdii", version, about = "Conductivity reconstruction from internal current densities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample an analytic case and write it as a container (stdout unless -o is given)
    Case {
        /// constant-identity-2d, constant-spd-2d, odd-3d-t623, cgo-2d,
        /// isotropic-exponential-2d or warped-spd-2d
        name: String,
        #[command(flatten)]
        args: CommonArgs,
    },
    /// Solve the conductivity equation for every boundary datum of the input
    Forward(CommonArgs),
    /// Copy the measurements, perturbed as given by --noise
    Measure(CommonArgs),
    /// Evaluate the hypothesis functionals and report their infima
    CheckHyps(CommonArgs),
    /// Reconstruct beta with a known anisotropic structure
    ReconBeta(CommonArgs),
    /// Reconstruct beta and the anisotropic structure from the currents
    ReconAniso(CommonArgs),
    /// Reconstruct gamma through the coupled elliptic system
    ReconGlobal(CommonArgs),
    /// Curl of the inverse conductivity from the currents
    Curl(CommonArgs),
    /// Reconstruct at several noise levels and tabulate the deviations
    SweepNoise {
        /// Comma-separated noise levels
        #[arg(long, value_delimiter = ',', required = true)]
        levels: Vec<f64>,
        /// Smoothing radius in nodes
        #[arg(long, default_value_t = 4.0)]
        radius: f64,
        #[arg(long, default_value_t = 11)]
        seed: u64,
        #[command(flatten)]
        args: CommonArgs,
    },
}

/// What a command hands back for printing and saving.
struct Report {
    summary: Summary,
    result: Option<Container>,
    /// Extra CSV tables: file name and rows (first row is the header).
    tables: Vec<(String, Vec<Vec<String>>)>,
}

impl Report {
    fn new(summary: Summary) -> Report {
        Report {
            summary,
            result: None,
            tables: Vec::new(),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, report) = match cli.command {
        Command::Case { name, mut args } => {
            args.case = Some(name);
            let cfg = ExperimentConfig::from_args(&args)?;
            let cfg = ExperimentConfig {
                emit: cfg.emit.clone().or(Some(Emit::Stdout)),
                ..cfg
            };
            let r = case(&cfg)?;
            (cfg, r)
        }
        Command::Forward(a) => with(a, forward)?,
        Command::Measure(a) => with(a, measure)?,
        Command::CheckHyps(a) => {
            let cfg = ExperimentConfig::from_args(&a)?;
            let (r, failed) = check_hyps(&cfg)?;
            emit(&cfg, &r)?;
            return match failed {
                Some(msg) => Err(CliError::HypothesisFailed(msg)),
                None => Ok(()),
            };
        }
        Command::ReconBeta(a) => with(a, |c| recon_joint(c, true))?,
        Command::ReconAniso(a) => with(a, |c| recon_joint(c, false))?,
        Command::ReconGlobal(a) => with(a, recon_global)?,
        Command::Curl(a) => with(a, curl)?,
        Command::SweepNoise { levels, radius, seed, args } => {
            let cfg = ExperimentConfig::from_args(&args)?;
            let r = sweep_noise(&cfg, &levels, radius, seed)?;
            (cfg, r)
        }
    };
    emit(&cfg, &report)
}

fn with(a: CommonArgs, f: impl FnOnce(&ExperimentConfig) -> Result<Report, CliError>) -> Result<(ExperimentConfig, Report), CliError> {
    let cfg = ExperimentConfig::from_args(&a)?;
    let r = f(&cfg)?;
    Ok((cfg, r))
}

fn emit(cfg: &ExperimentConfig, r: &Report) -> Result<(), CliError> {
    let to_stdout = cfg.emit == Some(Emit::Stdout);
    let print = |w: &mut dyn Write| -> io::Result<()> {
        r.summary.print(&mut *w)?;
        for (name, rows) in &r.tables {
            writeln!(w, "{name}:")?;
            for row in rows {
                writeln!(w, "  {}", row.join(","))?;
            }
        }
        Ok(())
    };
    if to_stdout {
        print(&mut io::stderr().lock()).map_err(CliError::io("<stderr>"))?;
    } else {
        print(&mut io::stdout().lock()).map_err(CliError::io("<stdout>"))?;
    }
    match (&cfg.emit, &r.result) {
        (Some(Emit::Stdout), Some(c)) => c.write_to(io::stdout().lock())?,
        (Some(Emit::File(p)), Some(c)) => {
            let f = fs::File::create(p).map_err(CliError::io(p))?;
            c.write_to(io::BufWriter::new(f))?;
        }
        _ => {}
    }
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        r.summary.write_csv(&dir.join("summary.csv"))?;
        for (name, rows) in &r.tables {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            for row in rows {
                w.write_record(row)?;
            }
            w.flush().map_err(CliError::io(dir.join(name)))?;
        }
        if let Some(c) = &r.result {
            let path = dir.join("result.cdii");
            let f = fs::File::create(&path).map_err(CliError::io(&path))?;
            c.write_to(io::BufWriter::new(f))?;
            write_heatmaps(dir, c)?;
        }
    }
    Ok(())
}

fn describe_input(s: &mut Summary, l: &Loaded) {
    let g = l.grid();
    if let Some(name) = l.container.meta.get("case") {
        s.push("case", name);
    }
    s.push("grid", g.dims().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"));
    s.num("spacing", g.spacing()[0]);
}

fn case(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let loaded = load(cfg)?;
    let case = loaded.case.as_ref().expect("case source");
    let mut s = Summary::new(format!("case {}", case.name));
    describe_input(&mut s, &loaded);
    s.push("dimension", case.n);
    s.push("solutions", case.solutions.len());
    s.push("provenance", loaded.container.meta["provenance"].clone());
    if let Some(r) = case.pde_residual() {
        s.num("pde residual", r);
    }
    s.push("structure known", case.structure.is_some());
    let mut r = Report::new(s);
    r.result = Some(loaded.container);
    Ok(r)
}

fn forward(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let loaded = load(cfg)?;
    let gamma = loaded
        .truth()?
        .ok_or_else(|| CliError::Usage("forward needs a conductivity field 'gamma' in the input".into()))?;
    let bcs = loaded.boundary()?;
    if bcs.is_empty() {
        return Err(CliError::Usage("forward needs boundary data (fields g1, g2, ... or u1, u2, ...)".into()));
    }
    let grid = loaded.grid().clone();
    let mut s = Summary::new("forward");
    describe_input(&mut s, &loaded);
    let mut out = Container::new(grid.clone());
    out.insert("gamma", FieldData::Matrix(gamma.gamma().clone()))?;
    for (k, bc) in bcs.iter().enumerate() {
        let sol = solve_conductivity(&gamma, bc, &cfg.solver)?;
        let h = current_density(&gamma, &sol.u)?;
        s.push(format!("u{} iterations", k + 1), sol.iterations);
        s.num(format!("u{} residual", k + 1), sol.residual);
        if let Ok(exact) = loaded.container.scalar(&format!("u{}", k + 1)) {
            s.num(format!("u{} max error", k + 1), sol.u.max_abs_diff(exact));
        }
        out.insert(format!("g{}", k + 1), FieldData::Scalar(bc.as_field().clone()))?;
        out.insert(format!("u{}", k + 1), FieldData::Scalar(sol.u))?;
        out.insert(format!("H{}", k + 1), FieldData::Vector(h))?;
    }
    copy_omegas(&loaded, &mut out)?;
    out.meta = loaded.container.meta.clone();
    out.meta.insert("provenance".into(), "numeric".into());
    let mut r = Report::new(s);
    r.result = Some(out);
    Ok(r)
}

fn copy_omegas(from: &Loaded, to: &mut Container) -> Result<(), CliError> {
    for name in ["omega1", "omega2"] {
        if let Some(f) = from.container.get(name) {
            to.insert(name, f.clone())?;
        }
    }
    Ok(())
}

fn measure(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let spec = cfg
        .noise
        .ok_or_else(|| CliError::Usage("measure needs --noise level,radius,seed".into()))?;
    let loaded = load(cfg)?;
    let clean = loaded.measurements()?;
    let noisy = add_noise(&clean, &spec)?;
    let mut s = Summary::new("measure");
    describe_input(&mut s, &loaded);
    s.num("noise level", spec.level);
    s.num("noise radius", spec.radius);
    s.push("noise seed", spec.seed);
    let mut out = loaded.container.clone();
    for k in 0..noisy.len() {
        let delta = noisy.current(k).sub(clean.current(k));
        s.num(format!("H{} perturbation W1inf", k + 1), w1_inf_norm(&delta));
        out.insert(format!("H{}", k + 1), FieldData::Vector(noisy.current(k).clone()))?;
    }
    out.meta.insert(
        "noise".into(),
        format!("level={},radius={},seed={}", spec.level, spec.radius, spec.seed),
    );
    let mut r = Report::new(s);
    r.result = Some(out);
    Ok(r)
}

/// Hypothesis checks the measurement set has enough currents for.
fn feasible_checks(m: &MeasurementSet, have_omegas: bool) -> Vec<Hypothesis> {
    let n = m.dim();
    let mut checks = vec![Hypothesis::Basis];
    if m.len() >= 2 {
        checks.insert(0, Hypothesis::TwoSolutions);
    }
    let codim_needed = (sym_dim(n) - 1).div_ceil(n * (n - 1) / 2);
    if m.extra() >= codim_needed {
        checks.push(Hypothesis::Codimension);
    }
    if m.extra() >= codim_needed.max(2) {
        checks.push(Hypothesis::InvertibleZ);
        if have_omegas {
            checks.push(Hypothesis::EllipticS);
        }
    }
    checks
}

fn check_hyps(cfg: &ExperimentConfig) -> Result<(Report, Option<String>), CliError> {
    let loaded = load(cfg)?;
    let m = loaded.noisy_measurements(cfg)?;
    let sub = cfg.subdomain(m.grid())?;
    let omegas = loaded.omegas()?;
    let checks = feasible_checks(&m, omegas.is_some());
    let hcfg = HypothesisConfig {
        subdomain: Some(sub),
        c0: cfg.c0,
        c1: cfg.c1,
        omegas,
        checks: checks.clone(),
        ..Default::default()
    };
    let reports = check_hypotheses(&m, &hcfg)?;
    let mut s = Summary::new("check-hyps");
    describe_input(&mut s, &loaded);
    s.push("currents", m.len());
    let mut rows = vec![["hypothesis", "infimum", "threshold", "gating", "passed", "location"].map(String::from).to_vec()];
    for r in &reports {
        let loc = r.location.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
        s.push(
            r.hypothesis.label(),
            format!("inf {:.6e} (threshold {:.1e}) {} at ({loc})", r.infimum, r.threshold, status(r.passed, r.gating)),
        );
        rows.push(vec![
            r.hypothesis.label().to_string(),
            format!("{:e}", r.infimum),
            format!("{:e}", r.threshold),
            r.gating.to_string(),
            r.passed.to_string(),
            loc,
        ]);
    }
    for h in Hypothesis::ALL.iter().filter(|h| !checks.contains(h)) {
        s.push(h.label(), "skipped (not enough currents or no Omega fields)");
    }
    let failed = first_failure(&reports).map(|r| r.to_error().to_string());
    s.push("verdict", if failed.is_some() { "FAIL" } else { "PASS" });
    let mut r = Report::new(s);
    r.tables.push(("hypotheses.csv".into(), rows));
    Ok((r, failed))
}

fn status(passed: bool, gating: bool) -> &'static str {
    match (passed, gating) {
        (true, _) => "pass",
        (false, true) => "FAIL",
        (false, false) => "low (informational)",
    }
}

fn joint_config(cfg: &ExperimentConfig, sub: Subdomain, known: Option<MatrixField>) -> JointConfig {
    JointConfig {
        subdomain: Some(sub),
        c0: cfg.c0,
        c1: cfg.c1,
        beta_method: cfg.beta_method,
        known_gamma_tilde: known,
        ..Default::default()
    }
}

/// Errors of a joint reconstruction against a reference on the same box.
fn joint_errors(s: &mut Summary, res: &JointResult, truth: &ConductivityField) -> Result<(), CliError> {
    let sub = &res.subdomain;
    let t_beta = truth.beta().restrict(sub)?;
    let t_gt = truth.gamma_tilde().restrict(sub)?;
    let t_gamma = truth.gamma().restrict(sub)?;
    s.num("max |beta - beta_ref|", res.conductivity.beta().max_abs_diff(&t_beta));
    s.num("max |gamma_tilde - gamma_tilde_ref|", res.conductivity.gamma_tilde().max_diff(&t_gt));
    s.num("max |gamma - gamma_ref|", res.conductivity.gamma().max_diff(&t_gamma));
    s.num("L2 |gamma - gamma_ref|", res.conductivity.gamma().l2_diff(&t_gamma));
    Ok(())
}

fn recon_joint(cfg: &ExperimentConfig, known_structure: bool) -> Result<Report, CliError> {
    let loaded = load(cfg)?;
    let m = loaded.noisy_measurements(cfg)?;
    let grid = m.grid().clone();
    let sub = cfg.subdomain(&grid)?;
    let truth = loaded.truth()?;
    let anchor = resolve_anchor(cfg, &grid, &sub, truth.as_ref())?;
    let mut s = Summary::new(if known_structure { "recon-beta" } else { "recon-aniso" });
    describe_input(&mut s, &loaded);
    let known = if known_structure {
        Some(match (loaded.container.get("gamma_tilde"), &truth) {
            (Some(_), _) => {
                s.push("gamma_tilde", "from input field");
                loaded.container.matrix("gamma_tilde")?
            }
            (None, Some(t)) => {
                s.push("gamma_tilde", "from reference conductivity");
                t.gamma_tilde().clone()
            }
            (None, None) => {
                s.push("gamma_tilde", "identity (isotropic)");
                MatrixField::identity(&grid)
            }
        })
    } else {
        None
    };
    let res = joint_pipeline(&m, &anchor, &joint_config(cfg, sub, known))?;
    s.push("anchor node", anchor.node);
    s.num("anchor value", anchor.value);
    if let Some(b) = &res.b {
        s.num("min B", b.data().iter().copied().fold(f64::INFINITY, f64::min));
    }
    s.num("max |dF|", res.curl_free_defect);
    if let Some(d) = res.method_discrepancy {
        s.num("integration vs least squares", d);
    }
    s.push("sign disagreements", res.sign_disagreements);
    if let Some(t) = &truth {
        joint_errors(&mut s, &res, t)?;
    }
    let subgrid = grid.subgrid(&res.subdomain)?;
    let mut out = Container::new(subgrid);
    out.insert("beta", FieldData::Scalar(res.conductivity.beta().clone()))?;
    out.insert("gamma_tilde", FieldData::Matrix(res.conductivity.gamma_tilde().clone()))?;
    out.insert("gamma", FieldData::Matrix(res.conductivity.gamma().clone()))?;
    out.insert("grad_log_beta", FieldData::Vector(res.log_beta_gradient.clone()))?;
    if let Some(b) = &res.b {
        out.insert("B", FieldData::Scalar(b.clone()))?;
    }
    out.meta = loaded.container.meta.clone();
    out.meta.insert("provenance".into(), provenance_label(m.provenance).into());
    let mut r = Report::new(s);
    r.result = Some(out);
    Ok(r)
}

fn recon_global(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let loaded = load(cfg)?;
    let m = loaded.noisy_measurements(cfg)?;
    let (o1, o2) = loaded
        .omegas()?
        .ok_or_else(|| CliError::Usage("recon-global needs fields omega1 and omega2".into()))?;
    let n = m.dim();
    let bcs = loaded.boundary()?;
    if bcs.len() < n {
        return Err(CliError::Usage(format!("recon-global needs boundary data for the first {n} solutions")));
    }
    let (bundle, res) = global_pipeline(&m, &o1, &o2, &bcs[..n], &cfg.solver)?;
    let grid = m.grid().clone();
    let sub = cfg.subdomain(&grid)?;
    let mut s = Summary::new("recon-global");
    describe_input(&mut s, &loaded);
    s.push("solver iterations", res.stats.iterations);
    s.num("solver residual", res.stats.residual);
    s.num("max asymmetry of H [grad U]^-1", res.asymmetry);
    if let Some(t) = loaded.truth()? {
        let rec = res.conductivity.gamma().restrict(&sub)?;
        let want = t.gamma().restrict(&sub)?;
        s.num("max |gamma - gamma_ref|", rec.max_diff(&want));
        s.num("L2 |gamma - gamma_ref|", rec.l2_diff(&want));
    }
    for (j, u) in res.u.iter().enumerate() {
        if let Ok(exact) = loaded.container.scalar(&format!("u{}", j + 1)) {
            s.num(format!("max |u{} - u{}_ref|", j + 1, j + 1), u.max_abs_diff(exact));
        }
    }
    let mut out = Container::new(grid);
    out.insert("gamma", FieldData::Matrix(res.conductivity.gamma().clone()))?;
    out.insert("S", FieldData::Matrix(bundle.s.clone()))?;
    for (j, u) in res.u.iter().enumerate() {
        out.insert(format!("u{}", j + 1), FieldData::Scalar(u.clone()))?;
    }
    out.meta = loaded.container.meta.clone();
    let mut r = Report::new(s);
    r.result = Some(out);
    Ok(r)
}

fn curl_container(c: &CurlResult) -> Result<Container, CliError> {
    let grid = c.formula[0].field.grid().clone();
    let mut out = Container::new(grid);
    for (prefix, comps) in [("curl", &c.formula), ("curl_direct", &c.direct)] {
        for comp in comps {
            out.insert(
                format!("{prefix}_l{}_p{}q{}", comp.l, comp.p, comp.q),
                FieldData::Scalar(comp.field.clone()),
            )?;
        }
    }
    Ok(out)
}

fn finite_max(fields: impl Iterator<Item = ScalarField>) -> f64 {
    fields
        .flat_map(|f| f.into_data())
        .filter(|v| v.is_finite())
        .fold(0.0, |m, v| m.max(v.abs()))
}

fn curl(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let loaded = load(cfg)?;
    let m = loaded.noisy_measurements(cfg)?;
    let grid = m.grid().clone();
    let sub = cfg.subdomain(&grid)?;
    let mut s = Summary::new("curl");
    describe_input(&mut s, &loaded);
    let result = match loaded.truth()? {
        Some(t) => {
            s.push("gamma", "reference conductivity from input");
            curl_gamma_inverse(t.gamma(), &m.h_matrix(), Some(&sub), DET_THRESHOLD)?
        }
        None => {
            s.push("gamma", "reconstructed (recon-aniso)");
            let anchor = resolve_anchor(cfg, &grid, &sub, None)?;
            joint_pipeline(&m, &anchor, &joint_config(cfg, sub.clone(), None))?.curl
        }
    };
    let box_grid = result.formula[0].field.grid().clone();
    let inner = Subdomain::interior(&box_grid);
    s.num("max |curl|", finite_max(result.formula.iter().map(|c| c.field.clone())));
    s.num("max |formula - direct|", result.max_discrepancy(&inner));
    let mut r = Report::new(s);
    r.result = Some(curl_container(&result)?);
    Ok(r)
}

fn sweep_noise(cfg: &ExperimentConfig, levels: &[f64], radius: f64, seed: u64) -> Result<Report, CliError> {
    if levels.iter().any(|l| !(*l > 0.0)) {
        return Err(CliError::Usage("--levels must be positive".into()));
    }
    let loaded = load(cfg)?;
    let m = loaded.measurements()?;
    let grid = m.grid().clone();
    let sub = cfg.subdomain(&grid)?;
    let truth = loaded.truth()?;
    let anchor = resolve_anchor(cfg, &grid, &sub, truth.as_ref())?;
    let jc = joint_config(cfg, sub, None);
    let clean = joint_pipeline(&m, &anchor, &jc)?;
    let mut s = Summary::new("sweep-noise");
    describe_input(&mut s, &loaded);
    s.num("radius", radius);
    s.push("seed", seed);
    let mut rows = vec![
        ["level", "perturbation_w1inf", "beta_dev", "gamma_tilde_dev", "gamma_dev", "status"].map(String::from).to_vec(),
    ];
    for &level in levels {
        let noisy = add_noise(&m, &NoiseSpec::new(level, radius, seed))?;
        let size = (0..m.len())
            .map(|k| w1_inf_norm(&noisy.current(k).sub(m.current(k))))
            .fold(0.0, f64::max);
        let row = match joint_pipeline(&noisy, &anchor, &jc) {
            Ok(r) => vec![
                format!("{level:e}"),
                format!("{size:e}"),
                format!("{:e}", r.conductivity.beta().max_abs_diff(clean.conductivity.beta())),
                format!("{:e}", r.conductivity.gamma_tilde().max_diff(clean.conductivity.gamma_tilde())),
                format!("{:e}", r.conductivity.gamma().max_diff(clean.conductivity.gamma())),
                "ok".into(),
            ],
            Err(e) if e.is_hypothesis_failure() => {
                let mut v = vec![format!("{level:e}"), format!("{size:e}")];
                v.extend(["NaN", "NaN", "NaN"].map(String::from));
                v.push(format!("failed: {e}"));
                v
            }
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }
    s.push("levels", levels.len());
    let mut r = Report::new(s);
    r.tables.push(("sweep.csv".into(), rows));
    Ok(r)
}
