use lde_core::data::ToySpec;
use lde_core::eval::{bandwidth_grid_search, log_spaced, mc_cross_entropy_oracle, parzen_loglik};
use lde_core::DenseArray;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_rows(n: usize, d: usize, seed: u64) -> DenseArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseArray::new(vec![n, d], (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// `∫ φ(x) log N(x; 0, 1 + σ²) dx` by the trapezoid rule on `[−12, 12]`:
/// the large-support limit of a Gaussian Parzen estimate of N(0, 1) data.
fn smoothed_cross_entropy(sigma: f64) -> f64 {
    let var = 1.0 + sigma * sigma;
    let h = 1e-3;
    let n = (24.0 / h) as usize;
    (0..=n)
        .map(|i| {
            let x = -12.0 + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            w * h * phi * (-0.5 * (2.0 * std::f64::consts::PI * var).ln() - x * x / (2.0 * var))
        })
        .sum()
}

#[test]
fn parzen_matches_the_smoothed_cross_entropy() {
    let support = normal_rows(20_000, 1, 1);
    let test = normal_rows(2_000, 1, 2);
    for sigma in [0.2, 0.5] {
        let est = parzen_loglik(&support, sigma, &test).unwrap();
        let oracle = smoothed_cross_entropy(sigma);
        assert!((est.mean - oracle).abs() < 0.1, "σ={sigma}: {est:?} vs {oracle}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn grid_search_returns_the_brute_force_argmax(
        seed in any::<u64>(), d in 1usize..4, n in 1usize..40, m in 1usize..20, lo in 0.01f64..0.3, count in 1usize..12,
    ) {
        let support = normal_rows(n, d, seed);
        let validation = normal_rows(m, d, seed.wrapping_add(1));
        let grid = log_spaced(lo, lo * 20.0, count);
        let search = bandwidth_grid_search(&support, &validation, &grid).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &s in &grid {
            let ll = parzen_loglik(&support, s, &validation).unwrap().mean;
            if ll > best.0 {
                best = (ll, s);
            }
        }
        prop_assert_eq!(search.best_sigma, best.1);
    }
}

#[test]
fn toy_oracle_is_the_negative_entropy() {
    let spec = ToySpec::default();
    let samples = spec.sample(20_000, 3).unwrap();
    let est = mc_cross_entropy_oracle(|p| spec.log_density([p[0], p[1]]), &samples).unwrap();
    // Each line is a 20-wide uniform times a σ = 0.1 Gaussian; lines barely
    // overlap, so the entropy is close to that of six disjoint pieces.
    let weights = spec.effective_weights();
    let piece_entropy = 20f64.ln() + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * 0.01).ln();
    let mixing_entropy: f64 = -weights.iter().map(|w| w * w.ln()).sum::<f64>();
    let disjoint = -(piece_entropy + mixing_entropy);
    assert!((est.mean - disjoint).abs() < 0.1, "{est:?} vs {disjoint}");
    assert!(est.std_error < 0.02);
}
