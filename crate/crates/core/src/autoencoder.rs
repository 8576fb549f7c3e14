//! Fully connected undercomplete autoencoder with incremental latent learning.
//!
//! During training only a prefix of the latent vector is active. The rest is
//! multiplied by a constant zero, so it neither reaches the decoder nor sends
//! gradient back into the encoder. [`MaskSchedule`] widens the active prefix
//! linearly until it covers the whole latent vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::array::DenseArray;
use crate::error::{dim_err, Error, Result};
use crate::lde::fan_in_uniform;
use crate::optim::{Adam, Parameters};
use crate::tape::{Pointwise, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    /// Data scaled to `[−1, 1]`.
    Tanh,
    /// Data scaled to `[0, 1]`.
    Sigmoid,
}

impl OutputActivation {
    fn pointwise(self) -> Pointwise {
        match self {
            OutputActivation::Tanh => Pointwise::Tanh,
            OutputActivation::Sigmoid => Pointwise::Sigmoid,
        }
    }

    pub fn range(self) -> (f64, f64) {
        match self {
            OutputActivation::Tanh => (-1.0, 1.0),
            OutputActivation::Sigmoid => (0.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeConfig {
    pub input_dim: usize,
    /// Encoder hidden widths; the decoder uses them in reverse.
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
    pub output_activation: OutputActivation,
    /// Weight of the feature-space term of the reconstruction loss.
    pub beta: f64,
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.latent_dim >= self.input_dim {
            return Err(Error::Config(format!(
                "latent dimension {} must be in 1..{} (undercomplete)",
                self.latent_dim, self.input_dim
            )));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::Config(
                "hidden widths must be a nonempty list of positive sizes".into(),
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: DenseArray,
    pub bias: DenseArray,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeModel {
    config: AeConfig,
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
}

impl AeModel {
    pub fn init(config: AeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = |fan_in: usize, fan_out: usize| Dense {
            weight: fan_in_uniform(&mut rng, &[fan_in, fan_out], fan_in),
            bias: DenseArray::zeros(&[fan_out]),
        };
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden_widths);
        widths.push(config.latent_dim);
        let encoder = widths.windows(2).map(|w| dense(w[0], w[1])).collect();
        let decoder = widths.windows(2).rev().map(|w| dense(w[1], w[0])).collect();
        Ok(Self {
            config,
            encoder,
            decoder,
        })
    }

    pub fn from_parts(config: AeConfig, encoder: Vec<Dense>, decoder: Vec<Dense>) -> Result<Self> {
        let reference = Self::init(config.clone(), 0)?;
        let model = Self {
            config,
            encoder,
            decoder,
        };
        let ours = model.named_parameters();
        let theirs = reference.named_parameters();
        if ours.len() != theirs.len() {
            return Err(dim_err(
                "AeModel::from_parts",
                format!("{} parameter arrays, expected {}", ours.len(), theirs.len()),
            ));
        }
        for ((name, a), (_, b)) in ours.iter().zip(&theirs) {
            if a.shape() != b.shape() {
                return Err(dim_err(
                    "AeModel::from_parts",
                    format!("{name}: {:?}, expected {:?}", a.shape(), b.shape()),
                ));
            }
            if !a.is_finite() {
                return Err(Error::NonFinite("AeModel::from_parts"));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &AeConfig {
        &self.config
    }

    pub fn encoder(&self) -> &[Dense] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Dense] {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut [Dense] {
        &mut self.encoder
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundAe> {
        let mut bind_all = |layers: &[Dense]| -> Result<Vec<(Var, Var)>> {
            layers
                .iter()
                .map(|l| Ok((tape.leaf(l.weight.clone())?, tape.leaf(l.bias.clone())?)))
                .collect()
        };
        let encoder = bind_all(&self.encoder)?;
        let decoder = bind_all(&self.decoder)?;
        Ok(BoundAe { encoder, decoder })
    }

    /// affine → leaky ReLU per hidden layer, then a linear map to the latent.
    pub fn encode_tape(&self, tape: &mut Tape, bound: &BoundAe, x: Var) -> Result<Var> {
        let width = tape.shape(x).get(1).copied();
        if tape.shape(x).len() != 2 || width != Some(self.config.input_dim) {
            return Err(dim_err(
                "encode",
                format!("input {:?}, expected [B×{}]", tape.shape(x), self.config.input_dim),
            ));
        }
        run_stack(tape, &bound.encoder, x, Pointwise::Identity)
    }

    pub fn decode_tape(&self, tape: &mut Tape, bound: &BoundAe, z: Var) -> Result<Var> {
        let width = tape.shape(z).get(1).copied();
        if tape.shape(z).len() != 2 || width != Some(self.config.latent_dim) {
            return Err(dim_err(
                "decode",
                format!("latents {:?}, expected [B×{}]", tape.shape(z), self.config.latent_dim),
            ));
        }
        run_stack(tape, &bound.decoder, z, self.config.output_activation.pointwise())
    }

    pub fn encode(&self, x: &DenseArray) -> Result<DenseArray> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let x = tape.leaf(x.clone())?;
        let z = self.encode_tape(&mut tape, &bound, x)?;
        Ok(tape.value(z).clone())
    }

    pub fn decode(&self, z: &DenseArray) -> Result<DenseArray> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let z = tape.leaf(z.clone())?;
        let x = self.decode_tape(&mut tape, &bound, z)?;
        Ok(tape.value(x).clone())
    }

    /// One optimization step. With `schedule = None` this is the plain
    /// autoencoder path with no masking op on the tape at all.
    pub fn train_step(
        &mut self,
        adam: &mut Adam,
        batch: &DenseArray,
        schedule: Option<&MaskSchedule>,
        step: usize,
        feature_distance: Option<&dyn FeatureDistance>,
    ) -> Result<StepReport> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let x = tape.leaf(batch.clone())?;
        let z = self.encode_tape(&mut tape, &bound, x)?;
        let (active, decoder_input) = match schedule {
            Some(schedule) => {
                let d = schedule.effective_dim(step);
                (d, apply_latent_mask(&mut tape, z, d)?)
            }
            None => (self.config.latent_dim, z),
        };
        let x_hat = self.decode_tape(&mut tape, &bound, decoder_input)?;
        let loss = recon_loss(&mut tape, x, x_hat, self.config.beta, feature_distance)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        let latent_grad = grads.wrt(z);
        let grads = bound.gradients(&grads);
        adam.step_model(self, &grads)?;
        Ok(StepReport {
            loss: value,
            effective_dim: active,
            latent_grad,
        })
    }
}

impl Parameters for AeModel {
    fn named_parameters(&self) -> Vec<(String, &DenseArray)> {
        let mut out = Vec::new();
        for (prefix, layers) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, layer) in layers.iter().enumerate() {
                out.push((format!("{prefix}{i}.weight"), &layer.weight));
                out.push((format!("{prefix}{i}.bias"), &layer.bias));
            }
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut DenseArray> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Tape handles of an [`AeModel`]'s parameters.
pub struct BoundAe {
    pub encoder: Vec<(Var, Var)>,
    pub decoder: Vec<(Var, Var)>,
}

impl BoundAe {
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.encoder.iter().chain(&self.decoder).flat_map(|&(w, b)| [w, b])
    }

    /// Gradients in [`Parameters`] order.
    pub fn gradients(&self, grads: &crate::tape::Gradients) -> Vec<DenseArray> {
        self.vars().map(|v| grads.wrt(v)).collect()
    }
}

/// What one training step observed.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub loss: f64,
    pub effective_dim: usize,
    /// Gradient of the loss with respect to the encoder output, before masking.
    pub latent_grad: DenseArray,
}

fn run_stack(tape: &mut Tape, layers: &[(Var, Var)], mut h: Var, last: Pointwise) -> Result<Var> {
    let n = layers.len();
    for (i, &(w, b)) in layers.iter().enumerate() {
        h = tape.affine(h, w, b)?;
        let act = if i + 1 == n { last } else { Pointwise::LeakyRelu };
        if act != Pointwise::Identity {
            h = tape.pointwise(act, h)?;
        }
    }
    Ok(h)
}

/// Linear widening of the active latent prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaskSchedule {
    pub initial_dim: usize,
    pub full_dim: usize,
    pub ramp_end_step: usize,
    pub total_steps: usize,
}

impl MaskSchedule {
    pub fn new(initial_dim: usize, full_dim: usize, ramp_end_step: usize, total_steps: usize) -> Result<Self> {
        if initial_dim == 0 || initial_dim > full_dim {
            return Err(Error::Config(format!(
                "initial latent width {initial_dim} must be in 1..={full_dim}"
            )));
        }
        if ramp_end_step > total_steps {
            return Err(Error::Config(format!(
                "ramp end {ramp_end_step} is past the last step {total_steps}"
            )));
        }
        Ok(Self {
            initial_dim,
            full_dim,
            ramp_end_step,
            total_steps,
        })
    }

    /// Starts at `max(1, ⌈D/8⌉)` and reaches `D` halfway through training.
    pub fn default_for(full_dim: usize, total_steps: usize) -> Result<Self> {
        Self::new(full_dim.div_ceil(8).max(1), full_dim, total_steps / 2, total_steps)
    }

    /// Schedule that keeps the full latent active from the first step.
    pub fn disabled(full_dim: usize, total_steps: usize) -> Result<Self> {
        Self::new(full_dim, full_dim, 0, total_steps)
    }

    /// `min(D, d₀ + ⌊(D − d₀)·min(step, ramp) / ramp⌋)`.
    pub fn effective_dim(&self, step: usize) -> usize {
        if self.ramp_end_step == 0 {
            return self.full_dim;
        }
        let span = (self.full_dim - self.initial_dim) as u128;
        let progressed = step.min(self.ramp_end_step) as u128;
        let grown = span * progressed / self.ramp_end_step as u128;
        (self.initial_dim + grown as usize).min(self.full_dim)
    }
}

/// 0/1 mask keeping latent indices `< active`.
pub fn latent_mask(batch: usize, latent_dim: usize, active: usize) -> DenseArray {
    let mut mask = DenseArray::zeros(&[batch, latent_dim]);
    for row in mask.data_mut().chunks_mut(latent_dim) {
        row[..active].fill(1.0);
    }
    mask
}

/// Zeroes latent components past the first `active` ones, blocking their
/// gradient exactly.
pub fn apply_latent_mask(tape: &mut Tape, z: Var, active: usize) -> Result<Var> {
    let shape = tape.shape(z).to_vec();
    if shape.len() != 2 {
        return Err(dim_err("apply_latent_mask", format!("latents {shape:?}")));
    }
    if active == 0 || active > shape[1] {
        return Err(Error::Parameter(format!(
            "active latent width {active} outside 1..={}",
            shape[1]
        )));
    }
    tape.mul_const(z, latent_mask(shape[0], shape[1], active))
}

/// Distance between two batches in some feature space, e.g. the activations
/// of a pretrained network. Implementations build their computation on the
/// tape so it can be differentiated.
pub trait FeatureDistance {
    fn distance(&self, tape: &mut Tape, x: Var, x_hat: Var) -> Result<Var>;
}

/// `mean((x − x̂)²) + β·feature_distance(x, x̂)`.
pub fn recon_loss(
    tape: &mut Tape,
    x: Var,
    x_hat: Var,
    beta: f64,
    feature_distance: Option<&dyn FeatureDistance>,
) -> Result<Var> {
    if tape.shape(x) != tape.shape(x_hat) {
        return Err(dim_err(
            "recon_loss",
            format!("{:?} vs {:?}", tape.shape(x), tape.shape(x_hat)),
        ));
    }
    let diff = tape.sub(x, x_hat)?;
    let sq = tape.square(diff)?;
    let mse = tape.mean(sq)?;
    if beta == 0.0 {
        return Ok(mse);
    }
    let Some(hook) = feature_distance else {
        return Err(Error::Config(format!(
            "beta = {beta} needs a feature distance, none was supplied"
        )));
    };
    let perceptual = hook.distance(tape, x, x_hat)?;
    if tape.value(perceptual).len() != 1 {
        return Err(Error::Contract("feature distance must be a scalar".into()));
    }
    let weighted = tape.scale(perceptual, beta)?;
    let weighted = tape.reshape(weighted, tape.shape(mse).to_vec())?;
    tape.add(mse, weighted)
}

/// Rows `(1 − α)·z0 + α·z1` for every `α`.
pub fn interpolate_latents(z0: &[f64], z1: &[f64], alphas: &[f64]) -> Result<DenseArray> {
    if z0.len() != z1.len() {
        return Err(dim_err(
            "interpolate_latents",
            format!("endpoints of length {} and {}", z0.len(), z1.len()),
        ));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Parameter(format!("interpolation weight {a} outside [0, 1]")));
    }
    let mut data = Vec::with_capacity(alphas.len() * z0.len());
    for &alpha in alphas {
        data.extend(z0.iter().zip(z1).map(|(a, b)| (1.0 - alpha) * a + alpha * b));
    }
    DenseArray::new(vec![alphas.len(), z0.len()], data)
}

/// `0, 0.2, …, 1`.
pub fn default_alphas() -> Vec<f64> {
    (0..=5).map(|i| i as f64 / 5.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AE_LEARNING_RATE;

    fn config(input: usize, latent: usize, act: OutputActivation) -> AeConfig {
        AeConfig {
            input_dim: input,
            hidden_widths: vec![12, 6],
            latent_dim: latent,
            output_activation: act,
            beta: 0.0,
        }
    }

    fn toy_batch() -> DenseArray {
        DenseArray::from_rows(&[
            [0.9, -0.3, 0.1, 0.5, -0.8, 0.2],
            [-0.5, 0.4, 0.7, -0.1, 0.3, -0.6],
            [0.2, 0.8, -0.9, 0.0, 0.6, 0.4],
            [-0.7, -0.2, 0.3, 0.9, -0.4, -0.1],
        ])
        .unwrap()
    }

    #[test]
    fn overcomplete_configs_rejected() {
        assert!(AeModel::init(config(6, 6, OutputActivation::Tanh), 0).is_err());
        assert!(AeModel::init(config(6, 0, OutputActivation::Tanh), 0).is_err());
        let mut c = config(6, 2, OutputActivation::Tanh);
        c.hidden_widths.clear();
        assert!(AeModel::init(c, 0).is_err());
    }

    #[test]
    fn encode_is_deterministic_and_shape_checked() {
        let model = AeModel::init(config(6, 2, OutputActivation::Tanh), 3).unwrap();
        let x = toy_batch();
        assert_eq!(model.encode(&x).unwrap(), model.encode(&x).unwrap());
        assert_eq!(model.encode(&x).unwrap().shape(), &[4, 2]);
        assert!(model.encode(&DenseArray::zeros(&[2, 5])).is_err());
        assert!(model.decode(&DenseArray::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn zero_weights_encode_to_bias() {
        let mut model = AeModel::init(config(6, 2, OutputActivation::Tanh), 3).unwrap();
        for layer in model.encoder_mut() {
            layer.weight.data_mut().fill(0.0);
        }
        model.encoder_mut().last_mut().unwrap().bias = DenseArray::new(vec![2], vec![0.25, -1.5]).unwrap();
        let z = model.encode(&toy_batch()).unwrap();
        for row in z.row_iter() {
            assert_eq!(row, &[0.25, -1.5]);
        }
    }

    #[test]
    fn decoder_output_ranges() {
        for act in [OutputActivation::Tanh, OutputActivation::Sigmoid] {
            let model = AeModel::init(config(6, 2, act), 1).unwrap();
            let z = DenseArray::from_rows(&[[50.0, -80.0], [0.0, 0.0], [-3.0, 7.0]]).unwrap();
            let (lo, hi) = act.range();
            for &v in model.decode(&z).unwrap().data() {
                assert!(v >= lo && v <= hi, "{v} outside {lo}..{hi}");
            }
        }
    }

    #[test]
    fn effective_dim_reference_points() {
        let s = MaskSchedule::new(25, 200, 1000, 2000).unwrap();
        assert_eq!(s.effective_dim(0), 25);
        assert_eq!(s.effective_dim(500), 112);
        assert_eq!(s.effective_dim(1000), 200);
        assert_eq!(s.effective_dim(5000), 200);
        assert!(MaskSchedule::new(0, 4, 1, 2).is_err());
        assert!(MaskSchedule::new(5, 4, 1, 2).is_err());
        assert!(MaskSchedule::new(1, 4, 3, 2).is_err());
        let d = MaskSchedule::default_for(8, 100).unwrap();
        assert_eq!((d.initial_dim, d.ramp_end_step), (1, 50));
        assert_eq!(MaskSchedule::default_for(200, 10).unwrap().initial_dim, 25);
        assert_eq!(MaskSchedule::disabled(7, 10).unwrap().effective_dim(0), 7);
    }

    #[test]
    fn mask_zeroes_tail_and_blocks_gradient() {
        let mut tape = Tape::new();
        let z = tape
            .leaf(DenseArray::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap())
            .unwrap();
        let full = apply_latent_mask(&mut tape, z, 3).unwrap();
        assert_eq!(tape.value(full), tape.value(z));
        let first = apply_latent_mask(&mut tape, z, 1).unwrap();
        assert_eq!(tape.value(first).data(), &[1.0, 0.0, 0.0, 4.0, 0.0, 0.0]);
        let sq = tape.square(first).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap().wrt(z);
        assert_eq!(g.data(), &[2.0, 0.0, 0.0, 8.0, 0.0, 0.0]);
        assert!(apply_latent_mask(&mut tape, z, 0).is_err());
        assert!(apply_latent_mask(&mut tape, z, 4).is_err());
    }

    #[test]
    fn recon_loss_values_and_hook_contract() {
        let mut tape = Tape::new();
        let x = tape.leaf(DenseArray::zeros(&[1, 2])).unwrap();
        let same = recon_loss(&mut tape, x, x, 0.0, None).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
        let ones = tape.leaf(DenseArray::filled(&[1, 2], 1.0)).unwrap();
        let l = recon_loss(&mut tape, x, ones, 0.0, None).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
        assert!(matches!(
            recon_loss(&mut tape, x, ones, 0.5, None),
            Err(Error::Config(_))
        ));

        struct L1;
        impl FeatureDistance for L1 {
            fn distance(&self, tape: &mut Tape, x: Var, x_hat: Var) -> Result<Var> {
                let d = tape.sub(x, x_hat)?;
                let d = tape.square(d)?;
                tape.sum(d)
            }
        }
        let l = recon_loss(&mut tape, x, ones, 0.5, Some(&L1)).unwrap();
        assert_eq!(tape.value(l).item(), 1.0 + 0.5 * 2.0);
    }

    #[test]
    fn interpolation_endpoints_and_grid() {
        let z0 = [1.0, -2.0, 0.3];
        let z1 = [-1.0, 2.0, -0.3];
        let rows = interpolate_latents(&z0, &z1, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(rows.row(0), &z0);
        assert_eq!(rows.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(rows.row(2), &z1);
        assert_eq!(default_alphas().len(), 6);
        assert!(interpolate_latents(&z0, &z1, &[1.5]).is_err());
        assert!(interpolate_latents(&z0, &z1[..2], &[0.5]).is_err());
    }

    #[test]
    fn tiny_batch_loss_decreases() {
        let mut model = AeModel::init(config(6, 3, OutputActivation::Tanh), 5).unwrap();
        let mut adam = Adam::for_model(&model, AE_LEARNING_RATE).unwrap();
        let batch = toy_batch();
        let losses: Vec<f64> = (0..100)
            .map(|step| model.train_step(&mut adam, &batch, None, step, None).unwrap().loss)
            .collect();
        let rises = losses.windows(2).filter(|w| w[1] >= w[0]).count();
        assert!(rises <= 5, "{rises} non-decreasing steps");
        assert!(losses[99] < losses[0]);
    }

    #[test]
    fn masked_latents_get_no_gradient_during_ramp() {
        let mut model = AeModel::init(config(6, 4, OutputActivation::Tanh), 8).unwrap();
        let mut adam = Adam::for_model(&model, AE_LEARNING_RATE).unwrap();
        let schedule = MaskSchedule::new(1, 4, 30, 40).unwrap();
        let batch = toy_batch();
        for step in 0..40 {
            let report = model
                .train_step(&mut adam, &batch, Some(&schedule), step, None)
                .unwrap();
            let d = report.effective_dim;
            for row in report.latent_grad.row_iter() {
                assert!(row[d..].iter().all(|&g| g == 0.0), "step {step}: {row:?}");
            }
        }
    }

    #[test]
    fn full_width_schedule_matches_plain_path_bitwise() {
        let base = AeModel::init(config(6, 3, OutputActivation::Tanh), 2).unwrap();
        let (mut plain, mut masked) = (base.clone(), base);
        let mut adam_a = Adam::for_model(&plain, AE_LEARNING_RATE).unwrap();
        let mut adam_b = adam_a.clone();
        let schedule = MaskSchedule::disabled(3, 20).unwrap();
        let batch = toy_batch();
        for step in 0..20 {
            let a = plain.train_step(&mut adam_a, &batch, None, step, None).unwrap();
            let b = masked
                .train_step(&mut adam_b, &batch, Some(&schedule), step, None)
                .unwrap();
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
        assert_eq!(plain, masked);
    }
}
