use cdii_core::cases::{catalog, constant_case, spd_example_2d, AnalyticCase, Diffeomorphism};
use cdii_core::field::{Grid, MatrixField, Subdomain};
use cdii_core::forward::SolverConfig;
use cdii_core::global::{assemble_elliptic_system, coefficient_fields, global_pipeline, solve_global, DiscreteSystem};
use cdii_core::hypotheses::DET_THRESHOLD;
use nalgebra::DMatrix;

fn system(case: &AnalyticCase, g: &Grid) -> DiscreteSystem {
    let m = case.measurements(g).unwrap();
    let (o1, o2) = case.omega_fields(g).unwrap().unwrap();
    let b = coefficient_fields(&m, &o1, &o2, DET_THRESHOLD).unwrap();
    assemble_elliptic_system(&b, &case.boundary_conditions(g).unwrap()).unwrap()
}

/// Max residual of the discrete system at the exact solutions, over nodes at least `layers` deep.
fn exact_residual(case: &AnalyticCase, g: &Grid, layers: usize) -> f64 {
    let sys = system(case, g);
    let u = case.potentials(g).unwrap();
    let ax = sys.matrix.mul_vec(&sys.flatten(&u[..case.n]));
    let n = case.n;
    g.interior_nodes()
        .iter()
        .enumerate()
        .filter(|(_, &i)| g.multi_index(i).iter().zip(g.dims()).all(|(&c, &d)| c >= layers && c + layers < d))
        .flat_map(|(k, _)| (0..n).map(move |j| k * n + j))
        .fold(0.0f64, |m, r| m.max((ax[r] - sys.rhs[r]).abs()))
}

#[test]
fn constant_coefficients_vanish() {
    for name in ["constant-identity-2d", "constant-spd-2d", "odd-3d-t623"] {
        let case = catalog(name).unwrap();
        let g = case.grid(7).unwrap();
        let m = case.measurements(&g).unwrap();
        let (o1, o2) = case.omega_fields(&g).unwrap().unwrap();
        let b = coefficient_fields(&m, &o1, &o2, DET_THRESHOLD).unwrap();
        let vmax = b.v.iter().chain(&b.vt).flatten().flatten().map(|f| f.max_abs()).fold(0.0, f64::max);
        assert!(vmax < 1e-10, "{name}: {vmax}");
        assert!(b.s.max_diff(&case.expected_s(&g).unwrap().unwrap()) < 1e-10);
    }
}

#[test]
fn identity_case_decouples_into_laplace_problems() {
    let case = catalog("constant-identity-2d").unwrap();
    let g = case.grid(9).unwrap();
    let sys = system(&case, &g);
    assert!(sys.matrix.asymmetry() < 1e-15);
    for r in 0..sys.len() {
        for (c, v) in sys.matrix.row(r) {
            assert!(v == 0.0 || r % 2 == c % 2, "coupling between components in row {r}");
        }
    }
}

#[test]
fn exact_solutions_satisfy_the_warped_system_at_second_order() {
    let case = constant_case(&spd_example_2d(), &[1.0, -1.0])
        .unwrap()
        .push(&Diffeomorphism::warp(0.3).unwrap())
        .unwrap();
    let r: Vec<f64> = [17, 33, 65].iter().map(|&k| exact_residual(&case, &case.grid(k).unwrap(), 3)).collect();
    let ratios = [r[0] / r[1], r[1] / r[2]];
    assert!(ratios.iter().all(|&q| q > 3.3), "{r:?}");
}

#[test]
fn identity_case_recovers_gamma_at_h_1_64() {
    let case = catalog("constant-identity-2d").unwrap();
    let g = case.grid(129).unwrap();
    let m = case.measurements(&g).unwrap();
    let (o1, o2) = case.omega_fields(&g).unwrap().unwrap();
    let bc = case.boundary_conditions(&g).unwrap();
    let (_, res) = global_pipeline(&m, &o1, &o2, &bc, &SolverConfig::default()).unwrap();
    let err = res.conductivity.gamma().l2_diff(&MatrixField::identity(&g));
    assert!(err < 1e-6, "{err}");
    let u = case.potentials(&g).unwrap();
    assert!(res.u[0].max_abs_diff(&u[0]) < 1e-8);
}

#[test]
fn spd_case_recovers_gamma() {
    let case = catalog("constant-spd-2d").unwrap();
    let g = case.grid(33).unwrap();
    let m = case.measurements(&g).unwrap();
    let (o1, o2) = case.omega_fields(&g).unwrap().unwrap();
    let bc = case.boundary_conditions(&g).unwrap();
    let (_, res) = global_pipeline(&m, &o1, &o2, &bc, &SolverConfig::default()).unwrap();
    let expected = MatrixField::constant(&g, &spd_example_2d());
    assert!(res.conductivity.gamma().max_diff(&expected) < 1e-7);
    assert!(res.asymmetry < 1e-7);
}

#[test]
fn odd_case_uses_its_principal_part() {
    let case = catalog("odd-3d-t623").unwrap();
    let g = case.grid(9).unwrap();
    let m = case.measurements(&g).unwrap();
    let (o1, o2) = case.omega_fields(&g).unwrap().unwrap();
    let b = coefficient_fields(&m, &o1, &o2, DET_THRESHOLD).unwrap();
    let expected = DMatrix::from_row_slice(3, 3, &[6.0, 0.0, 2.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0]);
    assert!((b.s.at(100) - expected).abs().max() < 1e-10);
    let sys = assemble_elliptic_system(&b, &case.boundary_conditions(&g).unwrap()).unwrap();
    let res = solve_global(&sys, &m, &SolverConfig::default()).unwrap();
    assert!(res.conductivity.gamma().max_diff(&MatrixField::identity(&g)) < 1e-7);
}

#[test]
fn warped_case_converges() {
    let case = catalog("warped-spd-2d").unwrap();
    let errs: Vec<f64> = [17, 33]
        .iter()
        .map(|&k| {
            let g = case.grid(k).unwrap();
            let m = case.measurements(&g).unwrap();
            let (o1, o2) = case.omega_fields(&g).unwrap().unwrap();
            let bc = case.boundary_conditions(&g).unwrap();
            let (_, res) = global_pipeline(&m, &o1, &o2, &bc, &SolverConfig::default()).unwrap();
            let sub = Subdomain::interior(&g);
            let rec = res.conductivity.gamma().restrict(&sub).unwrap();
            rec.l2_diff(&case.gamma_field(&g).unwrap().restrict(&sub).unwrap())
        })
        .collect();
    assert!(errs[1] < errs[0] / 1.8, "{errs:?}");
}

#[test]
fn noise_constant_is_stable_across_levels() {
    use cdii_core::forward::{add_noise, w1_inf_norm, NoiseSpec};
    let case = catalog("warped-spd-2d").unwrap();
    let g = case.grid(33).unwrap();
    let m = case.measurements(&g).unwrap();
    let (o1, o2) = case.omega_fields(&g).unwrap().unwrap();
    let bc = case.boundary_conditions(&g).unwrap();
    let cfg = SolverConfig::default();
    let (_, clean) = global_pipeline(&m, &o1, &o2, &bc, &cfg).unwrap();
    let sub = Subdomain::interior(&g);
    let consts: Vec<f64> = [1e-4, 1e-3]
        .iter()
        .map(|&d| {
            let noisy = add_noise(&m, &NoiseSpec::new(d, 3.0, 7)).unwrap();
            let delta = (0..m.len()).map(|i| w1_inf_norm(&noisy.current(i).sub(m.current(i)))).fold(0.0, f64::max);
            let (_, res) = global_pipeline(&noisy, &o1, &o2, &bc, &cfg).unwrap();
            let diff = res.conductivity.gamma().restrict(&sub).unwrap();
            diff.l2_diff(&clean.conductivity.gamma().restrict(&sub).unwrap()) / delta
        })
        .collect();
    let ratio = consts[1] / consts[0];
    assert!((0.5..=2.0).contains(&ratio), "{consts:?}");
}
