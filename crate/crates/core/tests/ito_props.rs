use proptest::prelude::*;
use qstoch_core::ito::{
    functional_calculus, ito_correction, ito_product, moment_evolution, strat_convert, strat_product, ItoMatrix,
    ScalarProcessSpec, Side, Slot,
};
use qstoch_core::operator::{sample, OperatorMatrix, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_pair(seed: u64, dim: usize, gamma: f64) -> (OperatorMatrix, ItoMatrix) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = sample::general(&mut r, dim);
    let mut g = || sample::general(&mut r, dim);
    let dx = ItoMatrix::new(gamma, g(), g(), g(), g()).unwrap();
    (x, dx)
}

fn gammas() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), 0.2f64..3.0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn square_matches_product_rule(seed in any::<u64>(), dim in 1usize..=4, gamma in gammas()) {
        let (x, dx) = random_pair(seed, dim, gamma);
        let via_calculus = functional_calculus(&[0.0, 0.0, 1.0], &x, &dx).unwrap();
        let via_product = ito_product(&x, &dx, &x, &dx).unwrap();
        prop_assert!(via_calculus.max_abs_diff(&via_product) < 1e-10);
    }

    #[test]
    fn cube_matches_iterated_product(seed in any::<u64>(), dim in 1usize..=4, gamma in gammas()) {
        let (x, dx) = random_pair(seed, dim, gamma);
        let x2 = &x * &x;
        let dx2 = ito_product(&x, &dx, &x, &dx).unwrap();
        let want = ito_product(&x2, &dx2, &x, &dx).unwrap();
        let got = functional_calculus(&[0.0, 0.0, 0.0, 1.0], &x, &dx).unwrap();
        prop_assert!(got.max_abs_diff(&want) < 1e-9);
    }

    #[test]
    fn calculus_is_linear_in_polynomial(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (x, dx) = random_pair(seed, 3, 1.0);
        let p = [0.3, a, 0.0, 1.0];
        let q = [1.0, 0.0, b];
        let sum: Vec<f64> = (0..4).map(|i| p.get(i).unwrap_or(&0.0) + q.get(i).unwrap_or(&0.0)).collect();
        let lhs = functional_calculus(&sum, &x, &dx).unwrap();
        let rhs = functional_calculus(&p, &x, &dx).unwrap().try_add(&functional_calculus(&q, &x, &dx).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn stratonovich_product_rule(seed in any::<u64>(), dim in 1usize..=4, gamma in gammas()) {
        let (x, dx) = random_pair(seed, dim, gamma);
        let (y, dy) = random_pair(seed.wrapping_add(1), dim, gamma);
        let left = strat_product(Side::Left, &x, &dx, &y, &dy).unwrap();
        let right = strat_product(Side::Right, &x, &dx, &y, &dy).unwrap();
        let total = ito_product(&x, &dx, &y, &dy).unwrap();
        prop_assert!(left.try_add(&right).unwrap().max_abs_diff(&total) < 1e-10);
    }

    #[test]
    fn product_commutes_with_adjoint(seed in any::<u64>(), dim in 1usize..=4) {
        let (x, dx) = random_pair(seed, dim, 1.0);
        let (y, dy) = random_pair(seed ^ 0xabcd, dim, 1.0);
        let lhs = ito_product(&x, &dx, &y, &dy).unwrap().adjoint();
        let rhs = ito_product(&y.adjoint(), &dy.adjoint(), &x.adjoint(), &dx.adjoint()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn stratonovich_convert_differs_by_half_correction(seed in any::<u64>(), slot in 0usize..4) {
        let (x, dx) = random_pair(seed, 2, 1.0);
        let target = Slot::ALL[slot];
        let f = [0.5, -1.0, 0.25];
        let fx = x.poly(&f);
        let left = strat_convert(&x, &dx, &f, Side::Left, target).unwrap();
        let id = OperatorMatrix::identity(2);
        let da = ItoMatrix::unit(target, id, 1.0);
        let df = functional_calculus(&f, &x, &dx).unwrap();
        let ito_part = da.left_mul(&fx);
        let half = ito_correction(&df, &da).unwrap().scale(C64::new(0.5, 0.0));
        prop_assert!(left.max_abs_diff(&ito_part.try_add(&half).unwrap()) < 1e-12);
    }
}

#[test]
fn gaussian_moments_are_double_factorials() {
    let m = moment_evolution(&ScalarProcessSpec::wiener(1.0), 8, 1.0).unwrap();
    for (k, want) in [(2, 1.0), (4, 3.0), (6, 15.0), (8, 105.0)] {
        assert!((m[k - 1] - want).abs() < 1e-9, "order {k}: {}", m[k - 1]);
    }
    for k in [1, 3, 5, 7] {
        assert!(m[k - 1].abs() < 1e-12);
    }
}

#[test]
fn poisson_moments_are_touchard() {
    let m = moment_evolution(&ScalarProcessSpec::poisson(), 4, 1.0).unwrap();
    for (k, want) in [(1, 1.0), (2, 2.0), (3, 5.0), (4, 15.0)] {
        assert!((m[k - 1] - want).abs() < 1e-9);
    }
}

#[test]
fn wiener_variance_scales_with_time() {
    let m = moment_evolution(&ScalarProcessSpec::wiener(0.5), 2, 3.0).unwrap();
    assert!((m[1] - 0.75).abs() < 1e-12);
}
