use proptest::prelude::*;
use qstoch_core::hp::{
    heisenberg_ito_coeffs, ito_to_strat_unitary, lemma66_reorder_with, sample, strat_discrepancy, strat_left_to_ito,
    strat_to_ito_unitary, strat_to_ito_unitary_with, unitarity_residual, HShiftForm, NumberRule,
};
use qstoch_core::ito::ito_product;
use qstoch_core::operator::{sample as ms, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kappa() -> impl Strategy<Value = C64> {
    prop_oneof![Just(C64::new(0.5, 0.0)), Just(C64::new(0.5, 0.3)), (0.1f64..2.0, -1.0f64..1.0).prop_map(|(a, b)| C64::new(a, b))]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ito_coefficients_are_unitary(seed in any::<u64>(), dim in 1usize..=8, kappa in kappa()) {
        let g = sample::generator(&mut ChaCha8Rng::seed_from_u64(seed), dim, kappa);
        let co = strat_to_ito_unitary(&g).unwrap();
        prop_assert!(co.w.unitarity_defect() < 1e-10);
        prop_assert!(co.h.hermiticity_defect() < 1e-10);
        prop_assert!(unitarity_residual(&co) <= 1e-12 * (1.0 + co.l.max_abs().powi(2)));
    }

    #[test]
    fn coefficient_maps_round_trip(seed in any::<u64>(), dim in 1usize..=8, kappa in kappa()) {
        let g = sample::generator(&mut ChaCha8Rng::seed_from_u64(seed), dim, kappa);
        let back = ito_to_strat_unitary(&strat_to_ito_unitary(&g).unwrap(), kappa).unwrap();
        prop_assert!(back.e.max_abs_diff(&g.e) < 1e-10);
        prop_assert!(back.f.max_abs_diff(&g.f) < 1e-10);
        prop_assert!(back.g.max_abs_diff(&g.g) < 1e-10);
    }

    #[test]
    fn heisenberg_coefficients_are_a_homomorphism(seed in any::<u64>(), dim in 1usize..=5, kappa in kappa()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = sample::generator(&mut rng, dim, kappa);
        let co = strat_to_ito_unitary(&g).unwrap();
        let x0 = ms::general(&mut rng, dim);
        let y0 = ms::general(&mut rng, dim);
        let d = |m: &_| heisenberg_ito_coeffs(m, &co).unwrap().to_ito(co.gamma);
        let xy = &x0 * &y0;
        let lhs = d(&xy);
        let rhs = ito_product(&x0, &d(&x0), &y0, &d(&y0)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
    }

    #[test]
    fn composed_reordering_is_consistent(seed in any::<u64>(), dim in 1usize..=4, kappa in kappa()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = sample::generator(&mut rng, dim, kappa);
        let x0 = ms::general(&mut rng, dim);
        let co = strat_to_ito_unitary_with(&g, HShiftForm::NormalOrdered).unwrap();
        let via = strat_left_to_ito(&lemma66_reorder_with(&x0, &g, NumberRule::Composed).unwrap(), &g).unwrap();
        prop_assert!(via.max_abs_diff(&heisenberg_ito_coeffs(&x0, &co).unwrap()) < 1e-9);
    }

    #[test]
    fn printed_mismatch_is_fully_localized(seed in any::<u64>(), dim in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = sample::generator(&mut rng, dim, C64::new(0.5, 0.3));
        let x0 = ms::hermitian(&mut rng, dim);
        let d = strat_discrepancy(&x0, &g).unwrap();
        prop_assert!(d.corrected.iter().all(|&v| v < 1e-9), "{:?}", d);
    }
}
