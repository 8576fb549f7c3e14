use lde_core::data::BatchStream;
use lde_core::eval::{causality_check, mixture_mass};
use lde_core::optim::LDE_LEARNING_RATE;
use lde_core::{Adam, DenseArray, LdeConfig, LdeModel, Parameters};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

fn gaussian(n: usize, d: usize, scale: f64, seed: u64) -> DenseArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    DenseArray::new(vec![n, d], data).unwrap()
}

/// Multiplies every weight so the network output is far from its tame
/// initialization: large means, spread scales and peaked mixing weights.
fn inflated(config: LdeConfig, seed: u64, factor: f64) -> LdeModel {
    let mut model = LdeModel::init(config, seed).unwrap();
    for p in model.parameters_mut() {
        *p = p.map(|x| x * factor);
    }
    model
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parameters_never_depend_on_current_or_later_inputs(
        d in 1usize..12, k in 1usize..6, s in 2usize..4, seed in any::<u64>(),
    ) {
        let config = LdeConfig::new(d, k).unwrap().with_filter_size(s).unwrap();
        let model = inflated(config, seed, 1.5);
        let report = causality_check(&model, 16, seed ^ 0xabcd).unwrap();
        prop_assert!(report.passed(), "{:?}", report.counterexample);
    }
}

#[test]
fn every_conditional_integrates_to_one() {
    for (k, factor, seed) in [(1, 1.0, 0), (5, 1.0, 1), (10, 1.5, 2), (30, 1.3, 3)] {
        let model = inflated(LdeConfig::new(5, k).unwrap(), seed, factor);
        let z = gaussian(3, 5, 2.0, seed + 10);
        let mdn = model.forward(&z).unwrap();
        for b in 0..3 {
            let row = mdn.row(b);
            for i in 0..5 {
                let (log_pi, mu, sigma) = row.conditional(i);
                let mass = mixture_mass(log_pi, mu, sigma, 30.0);
                assert!((mass - 1.0).abs() < 1e-3, "K={k} row {b} position {i}: {mass}");
            }
        }
    }
}

#[test]
fn quadrature_of_a_known_mixture() {
    let log_pi = [0.25f64.ln(), 0.75f64.ln()];
    let mass = mixture_mass(&log_pi, &[-3.0, 40.0], &[1e-3, 7.0], 30.0);
    assert!((mass - 1.0).abs() < 1e-9, "{mass}");
}

#[test]
fn loss_trends_down_on_factorized_gaussian_data() {
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let means: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let sds: Vec<f64> = (0..d).map(|_| rng.random_range(0.3..2.0)).collect();
    let mut data = gaussian(4096, d, 1.0, 6);
    for row in 0..data.rows() {
        for (j, v) in data.row_mut(row).iter_mut().enumerate() {
            *v = means[j] + sds[j] * *v;
        }
    }
    let mut model = LdeModel::init(LdeConfig::new(d, 1).unwrap(), 7).unwrap();
    let mut adam = Adam::for_model(&model, LDE_LEARNING_RATE).unwrap();
    let mut stream = BatchStream::new(&data, 128, 8).unwrap();
    let losses: Vec<f64> = (0..500)
        .map(|_| model.train_step(&mut adam, &stream.next_batch()).unwrap())
        .collect();
    let window_means: Vec<f64> = losses
        .chunks(50)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    for w in window_means.windows(2) {
        assert!(w[1] < w[0], "50-step means {window_means:?}");
    }
}

/// Mixture CDF at `z`: the probability integral transform of a correct
/// sampler's output is uniform.
fn mixture_cdf(log_pi: &[f64], mu: &[f64], sigma: &[f64], z: f64) -> f64 {
    log_pi
        .iter()
        .zip(mu.iter().zip(sigma))
        .map(|(lp, (&m, &s))| lp.exp() * Normal::new(m, s).unwrap().cdf(z))
        .sum()
}

#[test]
fn sampler_and_density_agree() {
    let data = {
        let mut x = gaussian(2048, 2, 1.0, 11);
        for r in 0..x.rows() {
            let row = x.row_mut(r);
            row[1] = row[0] * row[0] - 1.0 + 0.3 * row[1];
        }
        x
    };
    let mut model = LdeModel::init(LdeConfig::new(2, 3).unwrap(), 12).unwrap();
    let mut adam = Adam::for_model(&model, 1e-3).unwrap();
    let mut stream = BatchStream::new(&data, 128, 13).unwrap();
    for _ in 0..300 {
        model.train_step(&mut adam, &stream.next_batch()).unwrap();
    }

    let n = 20_000;
    let samples = model.sample(n, 14).unwrap();
    let mdn = model.forward(&samples).unwrap();
    for i in 0..2 {
        let u: Vec<f64> = (0..n)
            .map(|b| {
                let row = mdn.row(b);
                let (lp, mu, sigma) = row.conditional(i);
                mixture_cdf(lp, mu, sigma, samples.get(&[b, i]))
            })
            .collect();
        let mean = u.iter().sum::<f64>() / n as f64;
        let var = u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        // Uniform(0,1): mean 1/2 (sd 0.289/√n), variance 1/12 (sd 0.0745/√n).
        assert!(
            (mean - 0.5).abs() < 4.0 * 0.2887 / (n as f64).sqrt(),
            "position {i}: PIT mean {mean}"
        );
        assert!(
            (var - 1.0 / 12.0).abs() < 4.0 * 0.0745 / (n as f64).sqrt(),
            "position {i}: PIT var {var}"
        );
    }

    // Negative entropy from two independent sample sets agrees within MC error.
    let a = lde_core::eval::lde_loglik(&model, &samples).unwrap();
    let b = lde_core::eval::lde_loglik(&model, &model.sample(n, 15).unwrap()).unwrap();
    let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
    assert!((a.mean - b.mean).abs() < 4.0 * se, "{a:?} vs {b:?}");
}

#[test]
fn deterministic_training() {
    let data = gaussian(512, 3, 1.0, 20);
    let run = || {
        let mut model = LdeModel::init(LdeConfig::new(3, 4).unwrap(), 21).unwrap();
        let mut adam = Adam::for_model(&model, LDE_LEARNING_RATE).unwrap();
        let mut stream = BatchStream::new(&data, 64, 22).unwrap();
        let losses: Vec<u64> = (0..20)
            .map(|_| model.train_step(&mut adam, &stream.next_batch()).unwrap().to_bits())
            .collect();
        (losses, model.sample(50, 23).unwrap())
    };
    assert_eq!(run(), run());
}
