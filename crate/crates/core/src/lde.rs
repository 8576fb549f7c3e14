//! Latent density estimator.
//!
//! The density of a latent vector `z ∈ R^D` is factorized autoregressively,
//! `p(z) = Π_i p(z_i | z_<i)`, and every conditional is a mixture of `K`
//! univariate Gaussians. The mixture parameters for all positions come out of
//! one pass of a dilated causal convolution stack followed by a 1×1
//! convolution head.
//!
//! The network input is a two-channel sequence of length `D`: a value channel
//! holding `z` shifted right by one slot, and a mask channel that is 1 where
//! the value channel carries a real coordinate and 0 on the leading pad slot.
//! With `L = ⌈log_s D⌉` causal layers of dilation `1, s, …, s^(L−1)` the
//! receptive field is `s^L ≥ D`, so the features at position `i` see exactly
//! `z_<i`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::array::DenseArray;
use crate::error::{dim_err, Error, Result};
use crate::optim::{Adam, Parameters};
use crate::tape::{logsumexp, mixture_joint, Tape, Var};

pub const DEFAULT_FILTER_SIZE: usize = 2;
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-3;
/// Mixture count used for generation.
pub const DEFAULT_MIXTURE_COUNT: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct LdeConfig {
    pub latent_dim: usize,
    pub mixture_count: usize,
    pub filter_size: usize,
    pub sigma_floor: f64,
}

impl LdeConfig {
    pub fn new(latent_dim: usize, mixture_count: usize) -> Result<Self> {
        let config = Self {
            latent_dim,
            mixture_count,
            filter_size: DEFAULT_FILTER_SIZE,
            sigma_floor: DEFAULT_SIGMA_FLOOR,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_filter_size(mut self, filter_size: usize) -> Result<Self> {
        self.filter_size = filter_size;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent dimension must be at least 1".into()));
        }
        if self.mixture_count == 0 {
            return Err(Error::Config("mixture count must be at least 1".into()));
        }
        if self.filter_size < 2 {
            return Err(Error::Config("filter size must be at least 2".into()));
        }
        if !(self.sigma_floor > 0.0 && self.sigma_floor.is_finite()) {
            return Err(Error::Config("sigma floor must be positive".into()));
        }
        Ok(())
    }

    /// `⌈log_s D⌉`, computed exactly as the smallest `L` with `s^L ≥ D`.
    pub fn layer_count(&self) -> usize {
        let mut layers = 0;
        let mut reach = 1usize;
        while reach < self.latent_dim {
            reach = reach.saturating_mul(self.filter_size);
            layers += 1;
        }
        layers
    }

    /// Output channels per causal layer: `2^(l+3)` for `l = 1..=L`.
    pub fn channels(&self) -> Vec<usize> {
        (1..=self.layer_count()).map(|l| 1usize << (l + 3)).collect()
    }

    /// Dilation of the zero-based causal layer `layer`.
    pub fn dilation(&self, layer: usize) -> usize {
        self.filter_size.pow(layer as u32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub filters: DenseArray,
    pub bias: DenseArray,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdeModel {
    config: LdeConfig,
    layers: Vec<ConvLayer>,
    head: ConvLayer,
}

/// Mixture parameters of every conditional for one latent vector, `[D×K]`
/// each. Mixing weights are kept as log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct MdnParams {
    pub log_pi: DenseArray,
    pub mu: DenseArray,
    pub sigma: DenseArray,
}

impl MdnParams {
    pub fn pi(&self) -> DenseArray {
        self.log_pi.map(f64::exp)
    }

    /// `(log π_i, μ_i, σ_i)` for position `i`.
    pub fn conditional(&self, i: usize) -> (&[f64], &[f64], &[f64]) {
        (self.log_pi.row(i), self.mu.row(i), self.sigma.row(i))
    }
}

/// Mixture parameters for a batch, `[B×D×K]` each.
#[derive(Clone, Debug, PartialEq)]
pub struct MdnBatch {
    pub log_pi: DenseArray,
    pub mu: DenseArray,
    pub sigma: DenseArray,
}

impl MdnBatch {
    pub fn batch_size(&self) -> usize {
        self.mu.shape()[0]
    }

    pub fn row(&self, b: usize) -> MdnParams {
        let take = |a: &DenseArray| DenseArray::new(a.shape()[1..].to_vec(), a.row(b).to_vec()).expect("row shape");
        MdnParams {
            log_pi: take(&self.log_pi),
            mu: take(&self.mu),
            sigma: take(&self.sigma),
        }
    }
}

/// Tape handles for the mixture parameters, `[B×D×K]` each.
#[derive(Clone, Copy, Debug)]
pub struct MdnVars {
    pub log_pi: Var,
    pub mu: Var,
    pub sigma: Var,
}

impl LdeModel {
    /// Uniform fan-in scaled initialization, `±√(6/fan_in)`.
    pub fn init(config: LdeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = config.filter_size;
        let mut in_channels = 2;
        let mut layers = Vec::new();
        for out_channels in config.channels() {
            layers.push(ConvLayer {
                filters: fan_in_uniform(&mut rng, &[out_channels, in_channels, s], in_channels * s),
                bias: DenseArray::zeros(&[out_channels]),
            });
            in_channels = out_channels;
        }
        let head = ConvLayer {
            filters: fan_in_uniform(&mut rng, &[3 * config.mixture_count, in_channels, 1], in_channels),
            bias: DenseArray::zeros(&[3 * config.mixture_count]),
        };
        Ok(Self { config, layers, head })
    }

    /// Assembles a model from explicit weights, checking every shape.
    pub fn from_parts(config: LdeConfig, layers: Vec<ConvLayer>, head: ConvLayer) -> Result<Self> {
        config.validate()?;
        let model = Self { config, layers, head };
        let reference = Self::init(model.config.clone(), 0)?;
        let ours = model.named_parameters();
        let theirs = reference.named_parameters();
        if ours.len() != theirs.len() {
            return Err(dim_err(
                "LdeModel::from_parts",
                format!("{} parameter arrays, expected {}", ours.len(), theirs.len()),
            ));
        }
        for ((name, a), (_, b)) in ours.iter().zip(&theirs) {
            if a.shape() != b.shape() {
                return Err(dim_err(
                    "LdeModel::from_parts",
                    format!("{name}: {:?}, expected {:?}", a.shape(), b.shape()),
                ));
            }
            if !a.is_finite() {
                return Err(Error::NonFinite("LdeModel::from_parts"));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &LdeConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn head(&self) -> &ConvLayer {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut ConvLayer {
        &mut self.head
    }

    /// Registers every parameter on `tape`, in [`Parameters`] order.
    pub fn bind(&self, tape: &mut Tape) -> Result<Vec<Var>> {
        self.parameters().into_iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Builds the mixture parameters of a batch on `tape`.
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], z: &DenseArray) -> Result<MdnVars> {
        self.forward_shifted(tape, params, z, 1)
    }

    /// `shift` is how far `z` is moved right in the value channel. Anything
    /// but 1 breaks the autoregressive property; 0 exists to let tests build
    /// a deliberately acausal model.
    pub(crate) fn forward_shifted(
        &self,
        tape: &mut Tape,
        params: &[Var],
        z: &DenseArray,
        shift: usize,
    ) -> Result<MdnVars> {
        let d = self.config.latent_dim;
        let k = self.config.mixture_count;
        if z.rank() != 2 || z.shape()[1] != d {
            return Err(dim_err(
                "lde_forward",
                format!("latents {:?}, model dimension {d}", z.shape()),
            ));
        }
        if params.len() != 2 * self.layers.len() + 2 {
            return Err(dim_err("lde_forward", "parameter handles do not match the model"));
        }
        let batch = z.shape()[0];

        let mut input = vec![0.0; batch * 2 * d];
        for b in 0..batch {
            let row = z.row(b);
            let base = b * 2 * d;
            for i in shift..d {
                input[base + i] = row[i - shift];
                input[base + d + i] = 1.0;
            }
        }
        let mut h = tape.leaf(DenseArray::new(vec![batch, 2, d], input)?)?;

        for (l, pair) in params[..2 * self.layers.len()].chunks(2).enumerate() {
            h = tape.dilated_causal_conv1d(h, pair[0], Some(pair[1]), self.config.dilation(l))?;
            h = tape.leaky_relu(h)?;
        }
        let n = params.len();
        let raw = tape.dilated_causal_conv1d(h, params[n - 2], Some(params[n - 1]), 1)?;
        let raw = tape.swap_last_two(raw)?;

        let logits = tape.slice_last(raw, 0, k)?;
        let log_pi = tape.log_softmax(logits)?;
        let mu = tape.slice_last(raw, k, 2 * k)?;
        let log_scale = tape.slice_last(raw, 2 * k, 3 * k)?;
        let scale = tape.exp(log_scale)?;
        let sigma = tape.offset(scale, self.config.sigma_floor)?;
        Ok(MdnVars { log_pi, mu, sigma })
    }

    /// Mixture parameters for every row of `z` (`[B×D]`).
    pub fn forward(&self, z: &DenseArray) -> Result<MdnBatch> {
        self.forward_with_shift(z, 1)
    }

    pub(crate) fn forward_with_shift(&self, z: &DenseArray, shift: usize) -> Result<MdnBatch> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape)?;
        let vars = self.forward_shifted(&mut tape, &params, z, shift)?;
        Ok(MdnBatch {
            log_pi: tape.value(vars.log_pi).clone(),
            mu: tape.value(vars.mu).clone(),
            sigma: tape.value(vars.sigma).clone(),
        })
    }

    /// `log p(z)` for every row of `z`.
    pub fn log_density(&self, z: &DenseArray) -> Result<Vec<f64>> {
        Ok(self
            .conditional_log_densities(z)?
            .row_iter()
            .map(|row| row.iter().sum())
            .collect())
    }

    /// `log p(z_i | z_<i)` for every row and position, `[B×D]`.
    pub fn conditional_log_densities(&self, z: &DenseArray) -> Result<DenseArray> {
        let params = self.forward(z)?;
        let (d, k) = (self.config.latent_dim, self.config.mixture_count);
        let mut out = Vec::with_capacity(z.len());
        for (b, row) in z.row_iter().enumerate() {
            for (i, &zi) in row.iter().enumerate() {
                let at = (b * d + i) * k;
                out.push(conditional_log_density(
                    &params.log_pi.data()[at..at + k],
                    &params.mu.data()[at..at + k],
                    &params.sigma.data()[at..at + k],
                    zi,
                ));
            }
        }
        DenseArray::new(vec![z.rows(), d], out)
    }

    /// Per-row `−(1/D) Σ_i log p(z_i | z_<i)`, averaged over the batch.
    pub fn nll_loss(&self, tape: &mut Tape, params: &[Var], batch: &DenseArray) -> Result<Var> {
        if batch.rank() != 2 || batch.rows() == 0 {
            return Err(Error::Contract("negative log-likelihood of an empty batch".into()));
        }
        let mdn = self.forward_tape(tape, params, batch)?;
        let conditional = tape.mixture_loglik(mdn.log_pi, mdn.mu, mdn.sigma, batch)?;
        let mean = tape.mean(conditional)?;
        tape.scale(mean, -1.0)
    }

    /// Forward + backward + Adam update on one batch; returns the batch loss
    /// measured before the update.
    pub fn train_step(&mut self, adam: &mut Adam, batch: &DenseArray) -> Result<f64> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape)?;
        let loss = self.nll_loss(&mut tape, &params, batch)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let grads: Vec<DenseArray> = params.iter().map(|&p| grads.wrt(p)).collect();
        adam.step_model(self, &grads)?;
        Ok(value)
    }

    /// Ancestral sampling of `n` latent vectors.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DenseArray> {
        if n == 0 {
            return Err(Error::Contract("sample count must be at least 1".into()));
        }
        let (d, k) = (self.config.latent_dim, self.config.mixture_count);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = DenseArray::zeros(&[n, d]);
        for i in 0..d {
            let params = self.forward(&z)?;
            for b in 0..n {
                let at = (b * d + i) * k;
                let log_pi = &params.log_pi.data()[at..at + k];
                let component = draw_component(&mut rng, log_pi);
                let eps: f64 = StandardNormal.sample(&mut rng);
                let value = params.mu.data()[at + component] + params.sigma.data()[at + component] * eps;
                // A poorly fit model can feed a tail draw back into an ever
                // larger scale; report that instead of emitting inf/NaN.
                if !value.is_finite() {
                    return Err(Error::NonFinite("ancestral sample"));
                }
                z.set(&[b, i], value);
            }
        }
        Ok(z)
    }
}

impl Parameters for LdeModel {
    fn named_parameters(&self) -> Vec<(String, &DenseArray)> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 2);
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("conv{l}.filters"), &layer.filters));
            out.push((format!("conv{l}.bias"), &layer.bias));
        }
        out.push(("head.filters".to_string(), &self.head.filters));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut DenseArray> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 2);
        for layer in &mut self.layers {
            out.push(&mut layer.filters);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.head.filters);
        out.push(&mut self.head.bias);
        out
    }
}

/// `log Σ_k π_k N(z; μ_k, σ_k²)` from log mixing weights.
pub fn conditional_log_density(log_pi: &[f64], mu: &[f64], sigma: &[f64], z: f64) -> f64 {
    let mut terms = vec![0.0; log_pi.len()];
    mixture_joint(log_pi, mu, sigma, z, &mut terms);
    logsumexp(&terms)
}

/// Log-density of `N(mean, sd²)` at `x`.
pub fn normal_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    -0.5 * u * u - sd.ln() - 0.5 * (2.0 * PI).ln()
}

fn draw_component(rng: &mut impl Rng, log_pi: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, lp) in log_pi.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return k;
        }
    }
    log_pi.len() - 1
}

pub(crate) fn fan_in_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> DenseArray {
    let bound = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let len = shape.iter().product();
    let data = (0..len).map(|_| dist.sample(rng)).collect();
    DenseArray::new(shape.to_vec(), data).expect("init shape")
}
