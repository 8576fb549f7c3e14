use lde_core::data::{ToySpec, DEFAULT_TOY_SAMPLES};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const GRID: usize = 24;
const LO: f64 = -12.0;
const CELL: f64 = 1.0;

/// Probability of every unit cell of `[−12, 12]²` by a midpoint rule with
/// `sub × sub` nodes per cell.
fn cell_probabilities(spec: &ToySpec, sub: usize) -> Vec<f64> {
    let h = CELL / sub as f64;
    let mut probs = vec![0.0; GRID * GRID];
    for cx in 0..GRID {
        for cy in 0..GRID {
            let (x0, y0) = (LO + cx as f64 * CELL, LO + cy as f64 * CELL);
            let mut acc = 0.0;
            for i in 0..sub {
                for j in 0..sub {
                    let p = [x0 + (i as f64 + 0.5) * h, y0 + (j as f64 + 0.5) * h];
                    acc += spec.log_density(p).exp();
                }
            }
            probs[cx * GRID + cy] = acc * h * h;
        }
    }
    probs
}

#[test]
fn density_integrates_to_one() {
    let total: f64 = cell_probabilities(&ToySpec::default(), 100).iter().sum();
    assert!((total - 1.0).abs() < 1e-3, "{total}");
}

#[test]
fn samples_pass_a_chi_square_test_against_the_density() {
    let spec = ToySpec::default();
    let probs = cell_probabilities(&spec, 60);
    let samples = spec.sample(DEFAULT_TOY_SAMPLES, 2024).unwrap();
    let mut counts = vec![0usize; GRID * GRID];
    let mut outside = 0usize;
    for row in samples.row_iter() {
        let cx = ((row[0] - LO) / CELL).floor();
        let cy = ((row[1] - LO) / CELL).floor();
        if (0.0..GRID as f64).contains(&cx) && (0.0..GRID as f64).contains(&cy) {
            counts[cx as usize * GRID + cy as usize] += 1;
        } else {
            outside += 1;
        }
    }
    let n = DEFAULT_TOY_SAMPLES as f64;
    let mut statistic = 0.0;
    let mut bins = 0usize;
    // Cells expecting fewer than five points (and the outside region) are
    // pooled into a single bin.
    let (mut pooled_obs, mut pooled_exp) = (outside as f64, n * (1.0 - probs.iter().sum::<f64>()).max(0.0));
    for (&c, &p) in counts.iter().zip(&probs) {
        let expected = n * p;
        if expected < 5.0 {
            pooled_obs += c as f64;
            pooled_exp += expected;
        } else {
            statistic += (c as f64 - expected).powi(2) / expected;
            bins += 1;
        }
    }
    if pooled_exp >= 5.0 {
        statistic += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        bins += 1;
    } else {
        assert!(pooled_obs <= 20.0, "{pooled_obs} points where {pooled_exp} expected");
    }
    let p_value = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(statistic);
    assert!(p_value > 1e-3, "chi² = {statistic} over {bins} bins, p = {p_value}");
}

#[test]
fn component_frequencies_match_the_effective_weights() {
    let spec = ToySpec::default();
    let n = DEFAULT_TOY_SAMPLES;
    let (_, labels) = spec.sample_labeled(n, 77).unwrap();
    for (c, w) in spec.effective_weights().into_iter().enumerate() {
        let freq = labels.iter().filter(|&&l| l == c).count() as f64 / n as f64;
        let sd = (w * (1.0 - w) / n as f64).sqrt();
        assert!((freq - w).abs() < 4.0 * sd, "component {c}: {freq} vs {w}");
    }
}

#[test]
fn the_gap_is_empty_and_its_mirror_is_not() {
    let spec = ToySpec::default();
    let samples = spec.sample(DEFAULT_TOY_SAMPLES, 5).unwrap();
    let in_box = |x0: f64, x1: f64| {
        samples
            .row_iter()
            .filter(|r| r[0] > x0 && r[0] < x1 && r[1] > 2.7 && r[1] < 3.3)
            .count()
    };
    // Only the vertical line x = 3 tails can leak in, and they are 4σ away.
    assert!(in_box(1.6, 2.6) <= 2);
    assert!(in_box(-2.6, -1.6) > 100);
}
