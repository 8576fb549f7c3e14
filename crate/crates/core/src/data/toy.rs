//! Grid-shaped two-dimensional target distribution.
//!
//! Six equally likely components, each the product of a uniform `U(−10, 10)`
//! axis and a Gaussian `N(0, 0.1²)` axis, shifted by a fixed bias. Three lie
//! horizontally at `y ∈ {0, −3, 3}` and three vertically at `x ∈ {0, 3, −3}`.
//! The upper horizontal component has a gap: samples with `x ∈ (1.6, 2.6)`
//! are rejected.
//!
//! Rejection changes the mixture, not only the gapped component. If
//! component `c` keeps a fraction `a_c` of its draws, the accepted points
//! follow weights `(a_c/6) / Z` with `Z = Σ_c a_c/6`, and the gapped
//! component's uniform density becomes `1/(20·a_c)` on what is left of its
//! support. The two factors of `a_c` cancel, so every component contributes
//! `1/(6·20·Z)` times its Gaussian density wherever its uniform coordinate is
//! in support. Here `a_3 = 19/20` and `Z = 119/120`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::lde::normal_log_density;
use crate::tape::logsumexp;

/// Training-set size used for the grid experiments.
pub const DEFAULT_TOY_SAMPLES: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UniformAxis {
    X,
    Y,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyComponent {
    pub uniform_axis: UniformAxis,
    pub bias: [f64; 2],
    /// Open interval of the uniform coordinate that is rejected.
    pub dropout: Option<(f64, f64)>,
}

impl ToyComponent {
    fn line(uniform_axis: UniformAxis, bias: [f64; 2]) -> Self {
        Self {
            uniform_axis,
            bias,
            dropout: None,
        }
    }

    fn coords(&self, point: [f64; 2]) -> (f64, f64) {
        match self.uniform_axis {
            UniformAxis::X => (point[0] - self.bias[0], point[1] - self.bias[1]),
            UniformAxis::Y => (point[1] - self.bias[1], point[0] - self.bias[0]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub components: Vec<ToyComponent>,
    pub half_width: f64,
    pub noise_sd: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        let mut t3 = ToyComponent::line(UniformAxis::X, [0.0, 3.0]);
        t3.dropout = Some((1.6, 2.6));
        Self {
            components: vec![
                ToyComponent::line(UniformAxis::X, [0.0, 0.0]),
                ToyComponent::line(UniformAxis::X, [0.0, -3.0]),
                t3,
                ToyComponent::line(UniformAxis::Y, [0.0, 0.0]),
                ToyComponent::line(UniformAxis::Y, [3.0, 0.0]),
                ToyComponent::line(UniformAxis::Y, [-3.0, 0.0]),
            ],
            half_width: 10.0,
            noise_sd: 0.1,
        }
    }
}

impl ToySpec {
    /// Fraction of component `c`'s draws that survive rejection.
    pub fn acceptance(&self, c: usize) -> f64 {
        let width = 2.0 * self.half_width;
        match self.components[c].dropout {
            Some((lo, hi)) => {
                let lo = lo.max(-self.half_width);
                let hi = hi.min(self.half_width);
                1.0 - (hi - lo).max(0.0) / width
            }
            None => 1.0,
        }
    }

    /// Mixture weights of the accepted points.
    pub fn effective_weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.components.len()).map(|c| self.acceptance(c)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|a| a / total).collect()
    }

    fn in_support(&self, c: usize, u: f64) -> bool {
        if u < -self.half_width || u > self.half_width {
            return false;
        }
        match self.components[c].dropout {
            Some((lo, hi)) => !(u > lo && u < hi),
            None => true,
        }
    }

    /// Rejection sampling until `n` points are accepted.
    pub fn sample(&self, n: usize, seed: u64) -> Result<DenseArray> {
        Ok(self.sample_labeled(n, seed)?.0)
    }

    /// Like [`sample`](Self::sample), also returning each point's component.
    pub fn sample_labeled(&self, n: usize, seed: u64) -> Result<(DenseArray, Vec<usize>)> {
        if n == 0 {
            return Err(Error::Contract("toy sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniform =
            Uniform::new_inclusive(-self.half_width, self.half_width).map_err(|e| Error::Parameter(e.to_string()))?;
        let noise = Normal::new(0.0, self.noise_sd).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut data = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        while labels.len() < n {
            let c = rng.random_range(0..self.components.len());
            let comp = &self.components[c];
            let u = uniform.sample(&mut rng);
            let e = noise.sample(&mut rng);
            if !self.in_support(c, u) {
                continue;
            }
            let point = match comp.uniform_axis {
                UniformAxis::X => [u + comp.bias[0], e + comp.bias[1]],
                UniformAxis::Y => [e + comp.bias[0], u + comp.bias[1]],
            };
            data.extend_from_slice(&point);
            labels.push(c);
        }
        Ok((DenseArray::new(vec![n, 2], data)?, labels))
    }

    /// Exact log-density of the accepted points.
    pub fn log_density(&self, point: [f64; 2]) -> f64 {
        let total: f64 = (0..self.components.len()).map(|c| self.acceptance(c)).sum();
        // 1 / (n_components · width · Z), with Z = total / n_components.
        let log_scale = -(2.0 * self.half_width * total).ln();
        let terms: Vec<f64> = self
            .components
            .iter()
            .enumerate()
            .filter_map(|(c, comp)| {
                let (u, g) = comp.coords(point);
                self.in_support(c, u)
                    .then(|| log_scale + normal_log_density(g, 0.0, self.noise_sd))
            })
            .collect();
        logsumexp(&terms)
    }
}
