//! Adam with bias correction.

use crate::array::DenseArray;
use crate::error::{dim_err, Error, Result};

/// Learning rate used for the autoencoder.
pub const AE_LEARNING_RATE: f64 = 1e-3;
/// Learning rate used for the latent density estimator.
pub const LDE_LEARNING_RATE: f64 = 2e-4;
pub const BETA1: f64 = 0.5;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;
pub const DEFAULT_BATCH_SIZE: usize = 128;

/// Anything with an ordered list of trainable arrays.
///
/// The order must be stable: optimizer state and checkpoints are matched to
/// parameters by position.
pub trait Parameters {
    fn named_parameters(&self) -> Vec<(String, &DenseArray)>;
    fn parameters_mut(&mut self) -> Vec<&mut DenseArray>;

    fn parameters(&self) -> Vec<&DenseArray> {
        self.named_parameters().into_iter().map(|(_, p)| p).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    step: u64,
    first: Vec<DenseArray>,
    second: Vec<DenseArray>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Adam {
    pub fn new(params: &[&DenseArray], learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        let zeros: Vec<DenseArray> = params.iter().map(|p| DenseArray::zeros(p.shape())).collect();
        Ok(Self {
            step: 0,
            first: zeros.clone(),
            second: zeros,
            learning_rate,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
        })
    }

    pub fn for_model<M: Parameters + ?Sized>(model: &M, learning_rate: f64) -> Result<Self> {
        Self::new(&model.parameters(), learning_rate)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[DenseArray] {
        &self.first
    }

    pub fn second_moments(&self) -> &[DenseArray] {
        &self.second
    }

    /// One update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut [&mut DenseArray], grads: &[DenseArray]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(dim_err(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, state for {}",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(dim_err(
                    "adam_step",
                    format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Parameter("Adam decay rates must lie in [0, 1)".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((pv, &gv), (mv, vv)) in iter {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Steps every parameter of `model`.
    pub fn step_model<M: Parameters + ?Sized>(&mut self, model: &mut M, grads: &[DenseArray]) -> Result<()> {
        let mut params = model.parameters_mut();
        self.step(&mut params, grads)
    }
}
