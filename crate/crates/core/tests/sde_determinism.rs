use qstoch_core::classical::{Calculus, CoefficientPair, NoiseKind};
use qstoch_core::sde::{run_ensemble, EnsembleConfig, Model, Scheme};

fn ensemble(threads: usize, seed: u64) -> Vec<f64> {
    let p = CoefficientPair::parse("0", "0.3*sin(x)", Calculus::Stratonovich, NoiseKind::Poisson).unwrap();
    let m = Model::new(&p).unwrap();
    let cfg = EnsembleConfig::new(Scheme::Averaged, 1.0, 1.0 / 64.0, 700, seed);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let e = pool.install(|| run_ensemble(&m, &cfg)).unwrap();
    let mut out = e.finals.clone();
    out.extend(e.mean);
    out.extend(e.variance);
    out
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn ensembles_are_bit_identical_across_thread_counts() {
    let one = bits(&ensemble(1, 11));
    assert_eq!(one, bits(&ensemble(3, 11)));
    assert_eq!(one, bits(&ensemble(8, 11)));
}

#[test]
fn different_seeds_differ() {
    assert_ne!(ensemble(1, 11), ensemble(1, 12));
}

#[test]
fn wiener_ito_and_strat_models_share_noise() {
    let p = CoefficientPair::parse("0", "x", Calculus::Stratonovich, NoiseKind::Wiener).unwrap();
    let strat = Model::new(&p).unwrap();
    let ito = Model::ito_from_strat(&p).unwrap();
    let mut cfg = EnsembleConfig::new(Scheme::Averaged, 1.0, 1.0 / 32.0, 50, 3);
    let a = run_ensemble(&strat, &cfg).unwrap();
    cfg.scheme = Scheme::Euler;
    let b = run_ensemble(&ito, &cfg).unwrap();
    assert_eq!(a.noise_totals, b.noise_totals);
}
