//! Generative modelling with a plain undercomplete autoencoder.
//!
//! The autoencoder is trained with an incrementally widening latent vector
//! ([`autoencoder`]). The empirical distribution of its latent codes is then
//! estimated explicitly by an autoregressive mixture-density network
//! ([`lde`]), and new data is generated by ancestral sampling from that
//! estimator followed by decoding.
//!
//! Everything differentiable runs on the small reverse-mode engine in
//! [`tape`]; [`optim`] provides Adam, [`data`] the datasets and [`eval`] the
//! likelihood-based evaluation tools.

pub mod array;
pub mod autoencoder;
pub mod data;
pub mod error;
pub mod eval;
pub mod lde;
pub mod optim;
pub mod tape;

pub use array::DenseArray;
pub use autoencoder::{AeConfig, AeModel, MaskSchedule, OutputActivation};
pub use error::{Error, Result};
pub use lde::{LdeConfig, LdeModel, MdnParams};
pub use optim::{Adam, Parameters};
pub use tape::{Tape, Var};
