//! Evaluation: Parzen-window log-likelihood, bandwidth selection, Monte-Carlo
//! cross-entropy, autoregressive causality and gradient checks, and the
//! log-likelihood along latent interpolation paths.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::array::DenseArray;
use crate::autoencoder::{interpolate_latents, AeModel};
use crate::error::{dim_err, Error, Result};
use crate::lde::{conditional_log_density, LdeModel, MdnBatch};

/// Mean of per-point values and its standard error `sd/√m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let m = values.len();
        if m == 0 {
            return Err(Error::Contract("estimate over zero values".into()));
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let std_error = if m > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        Ok(Self {
            mean,
            std_error,
            count: m,
        })
    }
}

/// Isotropic Gaussian kernel density estimate over `support` rows.
#[derive(Clone, Debug)]
pub struct ParzenEstimate {
    support: DenseArray,
    sigma: f64,
}

impl ParzenEstimate {
    pub fn new(support: DenseArray, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        if support.rank() != 2 || support.rows() == 0 {
            return Err(Error::Contract("Parzen support needs at least one row".into()));
        }
        Ok(Self { support, sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn support(&self) -> &DenseArray {
        &self.support
    }

    /// Mean log-likelihood of `test` rows with its standard error.
    pub fn loglik(&self, test: &DenseArray) -> Result<Estimate> {
        let per_point = parzen_log_densities(&self.support, test, &[self.sigma])?;
        Estimate::from_values(&per_point[0])
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "kernel bandwidth must be positive, got {sigma}"
        )))
    }
}

const DISTANCE_CHUNK: usize = 256;

/// Scale of the fixed-point kernel accumulator, 2^90: with fewer than 2^37
/// support rows the sum stays far below `i128::MAX`.
const FIXED_ONE: f64 = 1_237_940_039_285_380_274_899_124_224.0;

/// Per-point Parzen log-densities of `test` for every bandwidth in `sigmas`,
/// `result[s][i]`.
///
/// For each point, `log[(1/n) Σ_j N(x; s_j, σ²I)]`. Squared distances are
/// computed once and shared by all bandwidths; the kernel terms are summed in
/// fixed point, which makes the result independent of the order of the
/// support rows.
pub fn parzen_log_densities(support: &DenseArray, test: &DenseArray, sigmas: &[f64]) -> Result<Vec<Vec<f64>>> {
    for &s in sigmas {
        check_sigma(s)?;
    }
    if support.rank() != 2 || test.rank() != 2 || support.shape()[1] != test.shape()[1] {
        return Err(dim_err(
            "parzen_loglik",
            format!("support {:?}, test {:?}", support.shape(), test.shape()),
        ));
    }
    let n = support.rows();
    if n == 0 {
        return Err(Error::Contract("Parzen support needs at least one row".into()));
    }
    let d = support.shape()[1] as f64;
    let support_norms: Vec<f64> = support.row_iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let mut out = vec![Vec::with_capacity(test.rows()); sigmas.len()];
    let mut dist = vec![0.0; n];
    for start in (0..test.rows()).step_by(DISTANCE_CHUNK) {
        let chunk = test.slice_rows(start, (start + DISTANCE_CHUNK).min(test.rows()));
        let cross = crate::tape::matmul_transposed(&chunk, support);
        for (i, row) in chunk.row_iter().enumerate() {
            let norm: f64 = row.iter().map(|v| v * v).sum();
            for (j, dj) in dist.iter_mut().enumerate() {
                *dj = (norm + support_norms[j] - 2.0 * cross.get(&[i, j])).max(0.0);
            }
            let nearest = dist.iter().copied().fold(f64::INFINITY, f64::min);
            for (s, &sigma) in sigmas.iter().enumerate() {
                let inv = 0.5 / (sigma * sigma);
                // Terms relative to the largest one, exp(−(d_j − d_0)/2σ²) ∈ (0, 1],
                // accumulated in fixed point so the sum is exact up to the
                // per-term truncation and independent of the support order.
                let fixed: i128 = dist
                    .iter()
                    .map(|&dj| ((-(dj - nearest) * inv).exp() * FIXED_ONE) as i128)
                    .sum();
                let total = fixed as f64 / FIXED_ONE;
                let lse = -nearest * inv + total.ln();
                out[s].push(lse - (n as f64).ln() - 0.5 * d * (2.0 * PI * sigma * sigma).ln());
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper: Parzen mean log-likelihood of `test` under `support`.
pub fn parzen_loglik(support: &DenseArray, sigma: f64, test: &DenseArray) -> Result<Estimate> {
    ParzenEstimate::new(support.clone(), sigma)?.loglik(test)
}

/// 20 log-spaced bandwidths from 0.01 to 1.
pub fn default_bandwidth_grid() -> Vec<f64> {
    log_spaced(0.01, 1.0, 20)
}

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Outcome of a validation bandwidth search.
#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthSearch {
    pub best_sigma: f64,
    /// Validation estimate for each grid entry, in grid order.
    pub scores: Vec<(f64, Estimate)>,
}

impl BandwidthSearch {
    /// Whether the winner sits on either end of the sorted grid.
    pub fn at_grid_edge(&self) -> bool {
        let lo = self.scores.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let hi = self.scores.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        self.scores.len() > 1 && (self.best_sigma == lo || self.best_sigma == hi)
    }
}

/// Picks the grid bandwidth with the highest validation mean log-likelihood;
/// ties go to the smaller bandwidth.
pub fn bandwidth_grid_search(support: &DenseArray, validation: &DenseArray, grid: &[f64]) -> Result<BandwidthSearch> {
    if grid.is_empty() {
        return Err(Error::Parameter("bandwidth grid is empty".into()));
    }
    let per_point = parzen_log_densities(support, validation, grid)?;
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for (&sigma, values) in grid.iter().zip(&per_point) {
        let est = Estimate::from_values(values)?;
        scores.push((sigma, est));
        let better = match best {
            None => true,
            Some((bs, bm)) => est.mean > bm || (est.mean == bm && sigma < bs),
        };
        if better {
            best = Some((sigma, est.mean));
        }
    }
    Ok(BandwidthSearch {
        best_sigma: best.unwrap().0,
        scores,
    })
}

/// `E_p[log p]` estimated from samples of `p`: the best held-out
/// log-likelihood any model of `p` can reach.
pub fn mc_cross_entropy_oracle(log_density: impl Fn(&[f64]) -> f64, samples: &DenseArray) -> Result<Estimate> {
    let values: Vec<f64> = samples.row_iter().map(&log_density).collect();
    Estimate::from_values(&values)
}

/// Mean held-out `log p(z)` under an LDE, with standard error.
pub fn lde_loglik(model: &LdeModel, latents: &DenseArray) -> Result<Estimate> {
    let mut values = Vec::with_capacity(latents.rows());
    for start in (0..latents.rows()).step_by(1024) {
        let chunk = latents.slice_rows(start, (start + 1024).min(latents.rows()));
        values.extend(model.log_density(&chunk)?);
    }
    Estimate::from_values(&values)
}

/// Integral of a Gaussian mixture density over `⋃_k [μ_k − wσ_k, μ_k + wσ_k]`.
///
/// Composite Simpson on a mesh whose spacing never exceeds `σ_k / 4` inside
/// component `k`'s window, so narrow and wide components are both resolved
/// without a globally fine grid.
pub fn mixture_mass(log_pi: &[f64], mu: &[f64], sigma: &[f64], half_width_sds: f64) -> f64 {
    const PER_SD: f64 = 4.0;
    let mut knots = Vec::new();
    for (&m, &s) in mu.iter().zip(sigma) {
        let n = (2.0 * half_width_sds * PER_SD).ceil() as usize;
        knots.extend((0..=n).map(|i| m - half_width_sds * s + i as f64 * s / PER_SD));
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let density = |z: f64| conditional_log_density(log_pi, mu, sigma, z).exp();
    knots
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let h = (b - a) / 4.0;
            let f: [f64; 5] = std::array::from_fn(|i| density(a + i as f64 * h));
            h / 3.0 * (f[0] + 4.0 * f[1] + 2.0 * f[2] + 4.0 * f[3] + f[4])
        })
        .sum()
}

/// Something that maps latent batches to per-position mixture parameters.
pub trait Autoregressive {
    fn latent_dim(&self) -> usize;
    fn mixture_params(&self, z: &DenseArray) -> Result<MdnBatch>;
}

impl Autoregressive for LdeModel {
    fn latent_dim(&self) -> usize {
        self.config().latent_dim
    }

    fn mixture_params(&self, z: &DenseArray) -> Result<MdnBatch> {
        self.forward(z)
    }
}

/// First observed violation of autoregressive independence.
#[derive(Clone, Debug, PartialEq)]
pub struct Counterexample {
    pub trial: usize,
    /// Perturbed coordinate.
    pub coordinate: usize,
    /// Position `≤ coordinate` whose parameters changed.
    pub position: usize,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CausalityReport {
    pub trials: usize,
    pub counterexample: Option<Counterexample>,
}

impl CausalityReport {
    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }
}

const CAUSALITY_DELTAS: [f64; 4] = [0.1, -0.1, 10.0, -10.0];

/// Perturbs one random coordinate `j` of random latents per trial and checks
/// that the parameters at positions `i ≤ j` stay bit-identical.
pub fn causality_check<M: Autoregressive + ?Sized>(model: &M, trials: usize, seed: u64) -> Result<CausalityReport> {
    if trials == 0 {
        return Err(Error::Parameter("causality check needs at least one trial".into()));
    }
    let d = model.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..trials * d).map(|_| rng.sample(StandardNormal)).collect();
    let base = DenseArray::new(vec![trials, d], base)?;
    let mut perturbed = base.clone();
    let mut picks = Vec::with_capacity(trials);
    for t in 0..trials {
        let j = rng.random_range(0..d);
        let delta = CAUSALITY_DELTAS[rng.random_range(0..CAUSALITY_DELTAS.len())];
        perturbed.set(&[t, j], base.get(&[t, j]) + delta);
        picks.push((j, delta));
    }
    let a = model.mixture_params(&base)?;
    let b = model.mixture_params(&perturbed)?;
    for (t, &(j, delta)) in picks.iter().enumerate() {
        let (ra, rb) = (a.row(t), b.row(t));
        for i in 0..=j {
            let same =
                |x: &DenseArray, y: &DenseArray| x.row(i).iter().zip(y.row(i)).all(|(p, q)| p.to_bits() == q.to_bits());
            if !(same(&ra.log_pi, &rb.log_pi) && same(&ra.mu, &rb.mu) && same(&ra.sigma, &rb.sigma)) {
                return Ok(CausalityReport {
                    trials,
                    counterexample: Some(Counterexample {
                        trial: t,
                        coordinate: j,
                        position: i,
                        delta,
                    }),
                });
            }
        }
    }
    Ok(CausalityReport {
        trials,
        counterexample: None,
    })
}

/// Largest disagreement between analytic gradients and central differences.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub checked: usize,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` gradients against central finite differences of
/// `loss` at `params`, element by element.
pub fn gradient_check(
    params: &[DenseArray],
    analytic: &[DenseArray],
    mut loss: impl FnMut(&[DenseArray]) -> Result<f64>,
    step: f64,
) -> Result<GradientCheck> {
    if params.len() != analytic.len() {
        return Err(dim_err("gradient_check", "one gradient per parameter expected"));
    }
    let mut work: Vec<DenseArray> = params.to_vec();
    let mut report = GradientCheck {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_index: 0,
        checked: 0,
    };
    for p in 0..params.len() {
        if params[p].shape() != analytic[p].shape() {
            return Err(dim_err(
                "gradient_check",
                format!("parameter {p} shape differs from its gradient"),
            ));
        }
        for i in 0..params[p].len() {
            let original = params[p].data()[i];
            work[p].data_mut()[i] = original + step;
            let up = loss(&work)?;
            work[p].data_mut()[i] = original - step;
            let down = loss(&work)?;
            work[p].data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[p].data()[i], numeric, 1e-6);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = p;
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

/// Log-likelihood of latent interpolants between two encoded inputs.
#[derive(Clone, Debug)]
pub struct InterpolationCurve {
    pub alphas: Vec<f64>,
    pub latents: DenseArray,
    pub log_likelihood: Vec<f64>,
    pub decoded: DenseArray,
}

pub fn interpolation_loglik(
    ae: &AeModel,
    lde: &LdeModel,
    x0: &[f64],
    x1: &[f64],
    alphas: &[f64],
) -> Result<InterpolationCurve> {
    let ends = DenseArray::from_rows(&[x0, x1])?;
    let z = ae.encode(&ends)?;
    let latents = interpolate_latents(z.row(0), z.row(1), alphas)?;
    let log_likelihood = lde.log_density(&latents)?;
    let decoded = ae.decode(&latents)?;
    Ok(InterpolationCurve {
        alphas: alphas.to_vec(),
        latents,
        log_likelihood,
        decoded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lde::LdeConfig;
    use crate::tape::Tape;

    fn gaussian_rows(n: usize, d: usize, seed: u64) -> DenseArray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        DenseArray::new(vec![n, d], data).unwrap()
    }

    #[test]
    fn kernel_at_its_center() {
        let s = DenseArray::from_rows(&[[0.3, -1.2, 2.0]]).unwrap();
        let sigma = 0.4;
        let est = parzen_loglik(&s, sigma, &s).unwrap();
        let expected = -1.5 * (2.0 * PI * sigma * sigma).ln();
        assert!((est.mean - expected).abs() < 1e-12);
    }

    #[test]
    fn single_support_point_is_a_gaussian() {
        let s = DenseArray::from_rows(&[[1.0, 2.0]]).unwrap();
        let test = gaussian_rows(20, 2, 3);
        let sigma = 0.7;
        let per = parzen_log_densities(&s, &test, &[sigma]).unwrap();
        for (row, v) in test.row_iter().zip(&per[0]) {
            let expected: f64 = row
                .iter()
                .zip(s.row(0))
                .map(|(x, m)| crate::lde::normal_log_density(*x, *m, sigma))
                .sum();
            assert!((v - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn invariant_to_support_order() {
        let support = gaussian_rows(300, 3, 1);
        let test = gaussian_rows(40, 3, 2);
        let mut order: Vec<usize> = (0..300).collect();
        order.reverse();
        order.swap(3, 150);
        let shuffled = support.select_rows(&order);
        let a = parzen_log_densities(&support, &test, &[0.3, 1.0]).unwrap();
        let b = parzen_log_densities(&shuffled, &test, &[0.3, 1.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_bandwidth_and_shapes_rejected() {
        let s = gaussian_rows(5, 2, 0);
        assert!(matches!(parzen_loglik(&s, 0.0, &s), Err(Error::Parameter(_))));
        assert!(parzen_loglik(&s, -1.0, &s).is_err());
        assert!(parzen_loglik(&s, 1.0, &gaussian_rows(3, 3, 0)).is_err());
        assert!(bandwidth_grid_search(&s, &s, &[]).is_err());
    }

    #[test]
    fn singleton_grid_and_brute_force_argmax() {
        let support = gaussian_rows(500, 1, 4);
        let validation = gaussian_rows(200, 1, 5);
        let search = bandwidth_grid_search(&support, &validation, &[0.37]).unwrap();
        assert_eq!(search.best_sigma, 0.37);

        let grid = default_bandwidth_grid();
        assert_eq!(grid.len(), 20);
        assert!((grid[0] - 0.01).abs() < 1e-15 && (grid[19] - 1.0).abs() < 1e-12);
        let search = bandwidth_grid_search(&support, &validation, &grid).unwrap();
        let brute = grid
            .iter()
            .map(|&s| (s, parzen_loglik(&support, s, &validation).unwrap().mean))
            .fold(
                (0.0, f64::NEG_INFINITY),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        assert_eq!(search.best_sigma, brute.0);
        assert!(!search.at_grid_edge(), "unimodal curve peaked at the grid edge");
    }

    #[test]
    fn ties_prefer_smaller_bandwidth() {
        let support = DenseArray::from_rows(&[[0.0]]).unwrap();
        // Identical grid entries tie exactly.
        let search = bandwidth_grid_search(&support, &support, &[0.5, 0.5, 0.2, 0.2]).unwrap();
        assert_eq!(search.best_sigma, 0.2);
    }

    #[test]
    fn oracle_on_uniform_and_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = DenseArray::new(vec![1000, 1], (0..1000).map(|_| rng.random::<f64>()).collect()).unwrap();
        let est = mc_cross_entropy_oracle(|_| 0.0, &u).unwrap();
        assert_eq!(est.mean, 0.0);

        let n = 100_000;
        let z = gaussian_rows(n, 1, 9);
        let est = mc_cross_entropy_oracle(|x| crate::lde::normal_log_density(x[0], 0.0, 1.0), &z).unwrap();
        let entropy = 0.5 * (2.0 * PI * std::f64::consts::E).ln();
        assert!((est.mean + entropy).abs() < 3.0 * est.std_error, "{est:?}");
    }

    struct Acausal(LdeModel);

    impl Autoregressive for Acausal {
        fn latent_dim(&self) -> usize {
            self.0.config().latent_dim
        }

        fn mixture_params(&self, z: &DenseArray) -> Result<MdnBatch> {
            self.0.forward_with_shift(z, 0)
        }
    }

    #[test]
    fn causality_passes_for_real_models_and_catches_mutants() {
        let model = LdeModel::init(LdeConfig::new(6, 4).unwrap(), 5).unwrap();
        assert!(causality_check(&model, 100, 1).unwrap().passed());

        let tiny = LdeModel::init(LdeConfig::new(1, 2).unwrap(), 5).unwrap();
        assert!(causality_check(&tiny, 10, 1).unwrap().passed());

        let report = causality_check(&Acausal(model), 100, 1).unwrap();
        let cx = report.counterexample.expect("acausal model must be caught");
        assert_eq!(cx.position, cx.coordinate);
        assert!(causality_check(&tiny, 0, 1).is_err());
    }

    #[test]
    fn gradient_check_flags_wrong_gradients() {
        let params = vec![DenseArray::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()];
        let loss = |p: &[DenseArray]| -> Result<f64> {
            let mut tape = Tape::new();
            let w = tape.leaf(p[0].clone())?;
            let sq = tape.square(w)?;
            let s = tape.sum(sq)?;
            Ok(tape.value(s).item())
        };
        let good = vec![params[0].map(|v| 2.0 * v)];
        assert!(gradient_check(&params, &good, loss, 1e-5).unwrap().max_rel_error < 1e-8);
        let bad = vec![params[0].map(|v| 2.1 * v)];
        assert!(gradient_check(&params, &bad, loss, 1e-5).unwrap().max_rel_error > 0.01);
    }
}
