use cdii_core::cases::{constant_case, push_forward, Diffeomorphism};
use cdii_core::field::{exterior_derivative, gradient, wedge, Grid, MatrixField, ScalarField, SymBasis, VectorField};
use cdii_core::forward::{add_noise, NoiseSpec};
use cdii_core::hypotheses::constraint_space;
use cdii_core::recon::reconstruct_gamma_tilde;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn spd2() -> impl Strategy<Value = DMatrix<f64>> {
    (0.5..3.0f64, 0.5..3.0f64, -0.4..0.4f64).prop_map(|(a, b, r)| DMatrix::from_row_slice(2, 2, &[a, r, r, b]))
}

fn grid() -> Grid {
    Grid::uniform(2, 17, -1.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn curl_of_gradient_vanishes_to_rounding(a in -3.0..3.0f64, b in 0.2..4.0f64, c in -2.0..2.0f64) {
        let g = grid();
        let f = ScalarField::from_fn(&g, |x| a * (b * x[0]).sin() + c * x[0] * x[1] * x[1] + (x[1] * b).exp());
        let h = g.spacing()[0];
        let d = exterior_derivative(&gradient(&f)).max_abs();
        prop_assert!(d <= 64.0 * f64::EPSILON * f.max_abs() / (h * h), "{d}");
    }

    #[test]
    fn wedge_is_antisymmetric(p in prop::array::uniform4(-2.0..2.0f64)) {
        let g = grid();
        let a = VectorField::from_fn(&g, |x| vec![p[0] * x[1], p[1] + x[0] * x[0]]);
        let b = VectorField::from_fn(&g, |x| vec![p[2] * x[0] * x[1], p[3]]);
        let ab = wedge(&a, &b);
        let ba = wedge(&b, &a);
        prop_assert_eq!(ab.add(&ba).max_abs(), 0.0);
        prop_assert_eq!(wedge(&a, &a).max_abs(), 0.0);
    }

    #[test]
    fn identity_push_forward_is_a_no_op(gamma0 in spd2(), t in 0.5..3.0f64) {
        let case = constant_case(&gamma0, &[t, -t]).unwrap();
        let g = case.grid(9).unwrap();
        let b = case.field_bundle(&g).unwrap();
        let pushed = push_forward(&b, &Diffeomorphism::identity(2), &g, false).unwrap();
        prop_assert_eq!(pushed.uncovered, 0);
        prop_assert!(pushed.fields.gamma.max_diff(&b.gamma) < 1e-12);
        for (p, q) in pushed.fields.currents.iter().zip(&b.currents) {
            prop_assert!(p.sub(q).max_abs() < 1e-12);
        }
    }

    #[test]
    fn scaling_leaves_constant_planar_conductivity_unchanged(gamma0 in spd2(), s in 0.3..3.0f64) {
        let case = constant_case(&gamma0, &[1.0, -1.0]).unwrap();
        let pushed = case.push(&Diffeomorphism::scaling(2, s).unwrap()).unwrap();
        let g = pushed.grid(5).unwrap();
        let want = MatrixField::constant(&g, &gamma0);
        prop_assert!(pushed.gamma_field(&g).unwrap().max_diff(&want) < 1e-12);
    }

    #[test]
    fn noise_is_reproducible_and_has_the_requested_size(seed in any::<u64>(), level in 1e-6..1e-1f64) {
        let case = constant_case(&DMatrix::identity(2, 2), &[1.0, -1.0]).unwrap();
        let g = case.grid(9).unwrap();
        let m = case.measurements(&g).unwrap();
        let spec = NoiseSpec::new(level, 1.5, seed);
        let a = add_noise(&m, &spec).unwrap();
        let b = add_noise(&m, &spec).unwrap();
        for i in 0..m.len() {
            prop_assert_eq!(a.current(i).data(), b.current(i).data());
            let p = a.current(i).sub(m.current(i));
            let size = cdii_core::forward::w1_inf_norm(&p);
            prop_assert!((size - level).abs() <= 1e-9 * level, "{size} vs {level}");
        }
    }

    #[test]
    fn reconstructed_gamma_tilde_has_unit_determinant(gamma0 in spd2(), t in 0.5..3.0f64) {
        let case = constant_case(&gamma0, &[t, -t]).unwrap();
        let g = case.grid(5).unwrap();
        let b = case.field_bundle(&g).unwrap();
        let h = case.measurements(&g).unwrap().h_matrix();
        let cs = constraint_space(&b.z, &h).unwrap();
        let rec = reconstruct_gamma_tilde(&cs, &SymBasis::orthonormal(2), 1e-6, None).unwrap();
        let want = &gamma0 / gamma0.determinant().sqrt();
        for i in 0..g.len() {
            let m = rec.gamma_tilde.at(i);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-10);
            prop_assert!((m - &want).abs().max() < 1e-10);
        }
    }
}
