//! Models and latent sets as checkpoints.

use std::path::Path;

use lde_core::autoencoder::Dense;
use lde_core::data::Normalization;
use lde_core::lde::ConvLayer;
use lde_core::{AeConfig, AeModel, DenseArray, LdeConfig, LdeModel, Parameters};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::Activation;
use crate::error::{CliError, Result};

/// Contents of the `config` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Manifest {
    Autoencoder {
        input_dim: usize,
        hidden_widths: Vec<usize>,
        latent_dim: usize,
        output_activation: Activation,
        beta: f64,
        data_offset: f64,
        data_scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image_shape: Option<[usize; 2]>,
    },
    Lde {
        latent_dim: usize,
        mixture_count: usize,
        filter_size: usize,
        sigma_floor: f64,
    },
    Latents {
        latent_dim: usize,
    },
}

impl Manifest {
    fn of(ckpt: &Checkpoint) -> Result<Self> {
        Ok(toml::from_str(&ckpt.config)?)
    }

    fn kind(&self) -> &'static str {
        match self {
            Manifest::Autoencoder { .. } => "autoencoder",
            Manifest::Lde { .. } => "lde",
            Manifest::Latents { .. } => "latents",
        }
    }
}

fn wrong_kind(expected: &str, found: &Manifest) -> CliError {
    CliError::Mismatch(format!("expected a {expected} checkpoint, found {}", found.kind()))
}

fn with_parameters(manifest: &Manifest, model: &impl Parameters) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::new(toml::to_string(manifest)?);
    for (name, p) in model.named_parameters() {
        ckpt.push(name, p.clone())?;
    }
    Ok(ckpt)
}

/// A trained autoencoder with what is needed to map its outputs back to data.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedAutoencoder {
    pub model: AeModel,
    pub normalization: Normalization,
    pub image_shape: Option<(usize, usize)>,
}

impl SavedAutoencoder {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let c = self.model.config();
        let manifest = Manifest::Autoencoder {
            input_dim: c.input_dim,
            hidden_widths: c.hidden_widths.clone(),
            latent_dim: c.latent_dim,
            output_activation: c.output_activation.into(),
            beta: c.beta,
            data_offset: self.normalization.offset,
            data_scale: self.normalization.scale,
            image_shape: self.image_shape.map(|(h, w)| [h, w]),
        };
        with_parameters(&manifest, &self.model)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let manifest = Manifest::of(ckpt)?;
        let Manifest::Autoencoder {
            input_dim,
            hidden_widths,
            latent_dim,
            output_activation,
            beta,
            data_offset,
            data_scale,
            image_shape,
        } = manifest
        else {
            return Err(wrong_kind("autoencoder", &manifest));
        };
        let depth = hidden_widths.len() + 1;
        let layers = |prefix: &str| -> Result<Vec<Dense>> {
            (0..depth)
                .map(|i| {
                    Ok(Dense {
                        weight: ckpt.get(&format!("{prefix}{i}.weight"))?.clone(),
                        bias: ckpt.get(&format!("{prefix}{i}.bias"))?.clone(),
                    })
                })
                .collect()
        };
        let config = AeConfig {
            input_dim,
            hidden_widths,
            latent_dim,
            output_activation: output_activation.into(),
            beta,
        };
        let model = AeModel::from_parts(config, layers("encoder")?, layers("decoder")?)?;
        expect_exact_sections(ckpt, &model)?;
        Ok(Self {
            model,
            normalization: Normalization::new(data_offset, data_scale)?,
            image_shape: image_shape.map(|[h, w]| (h, w)),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}

pub fn lde_to_checkpoint(model: &LdeModel) -> Result<Checkpoint> {
    let c = model.config();
    let manifest = Manifest::Lde {
        latent_dim: c.latent_dim,
        mixture_count: c.mixture_count,
        filter_size: c.filter_size,
        sigma_floor: c.sigma_floor,
    };
    with_parameters(&manifest, model)
}

pub fn lde_from_checkpoint(ckpt: &Checkpoint) -> Result<LdeModel> {
    let manifest = Manifest::of(ckpt)?;
    let Manifest::Lde {
        latent_dim,
        mixture_count,
        filter_size,
        sigma_floor,
    } = manifest
    else {
        return Err(wrong_kind("lde", &manifest));
    };
    let mut config = LdeConfig::new(latent_dim, mixture_count)?.with_filter_size(filter_size)?;
    config.sigma_floor = sigma_floor;
    config.validate()?;
    let layer = |prefix: &str| -> Result<ConvLayer> {
        Ok(ConvLayer {
            filters: ckpt.get(&format!("{prefix}.filters"))?.clone(),
            bias: ckpt.get(&format!("{prefix}.bias"))?.clone(),
        })
    };
    let layers = (0..config.layer_count())
        .map(|l| layer(&format!("conv{l}")))
        .collect::<Result<Vec<_>>>()?;
    let model = LdeModel::from_parts(config, layers, layer("head")?)?;
    expect_exact_sections(ckpt, &model)?;
    Ok(model)
}

pub fn save_lde(model: &LdeModel, path: &Path) -> Result<()> {
    lde_to_checkpoint(model)?.write(path)
}

pub fn load_lde(path: &Path) -> Result<LdeModel> {
    lde_from_checkpoint(&Checkpoint::read(path)?)
}

fn expect_exact_sections(ckpt: &Checkpoint, model: &impl Parameters) -> Result<()> {
    let expected = model.named_parameters().len();
    if ckpt.tensors.len() != expected {
        return Err(CliError::Checkpoint(format!(
            "{} tensor sections where the declared model has {expected}",
            ckpt.tensors.len()
        )));
    }
    Ok(())
}

/// Encoded train / validation / test partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSet {
    pub train: DenseArray,
    pub validation: DenseArray,
    pub test: DenseArray,
}

pub const SPLITS: [&str; 3] = ["train", "validation", "test"];

impl LatentSet {
    pub fn latent_dim(&self) -> usize {
        self.train.row_len()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let manifest = Manifest::Latents {
            latent_dim: self.latent_dim(),
        };
        let mut ckpt = Checkpoint::new(toml::to_string(&manifest)?);
        for (name, part) in SPLITS.iter().zip([&self.train, &self.validation, &self.test]) {
            ckpt.push(*name, part.clone())?;
        }
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let manifest = Manifest::of(ckpt)?;
        let Manifest::Latents { latent_dim } = manifest else {
            return Err(wrong_kind("latents", &manifest));
        };
        let [train, validation, test] = SPLITS.map(|s| ckpt.get(s).cloned());
        let set = Self {
            train: train?,
            validation: validation?,
            test: test?,
        };
        for part in [&set.train, &set.validation, &set.test] {
            if part.rank() != 2 || part.row_len() != latent_dim {
                return Err(CliError::Checkpoint(format!(
                    "latent split of shape {:?}, declared width {latent_dim}",
                    part.shape()
                )));
            }
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}
