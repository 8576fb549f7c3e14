//! Experiment configuration: a TOML file with one table per pipeline stage.
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use lde_core::autoencoder::default_alphas;
use lde_core::data::csv::read_csv;
use lde_core::data::{load_pgm_folder, mnist_load, Normalization, SplitDataset, ToySpec};
use lde_core::lde::{DEFAULT_FILTER_SIZE, DEFAULT_MIXTURE_COUNT, DEFAULT_SIGMA_FLOOR};
use lde_core::optim::{AE_LEARNING_RATE, DEFAULT_BATCH_SIZE, LDE_LEARNING_RATE};
use lde_core::{AeConfig, LdeConfig, MaskSchedule, OutputActivation};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// Absent for data the density estimator models directly (the toy set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub autoencoder: Option<AutoencoderSection>,
    pub lde: LdeSection,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// IDX files; the last 10k training images are the validation split.
    Mnist {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        validation_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    /// The six-line toy distribution, sampled until enough points are accepted.
    Toy {
        #[serde(default = "default_toy_train")]
        train: usize,
        #[serde(default = "default_holdout")]
        validation: usize,
        #[serde(default = "default_holdout")]
        test: usize,
    },
    /// A folder of equally sized binary PGM images, scaled to `[−1, 1]`.
    PgmFolder {
        path: PathBuf,
        validation: usize,
        test: usize,
    },
    /// A CSV file with a header row, used as is.
    Csv {
        path: PathBuf,
        validation: usize,
        test: usize,
    },
}

fn default_toy_train() -> usize {
    lde_core::data::DEFAULT_TOY_SAMPLES
}

fn default_holdout() -> usize {
    10_000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl From<Activation> for OutputActivation {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Sigmoid => OutputActivation::Sigmoid,
            Activation::Tanh => OutputActivation::Tanh,
        }
    }
}

impl From<OutputActivation> for Activation {
    fn from(a: OutputActivation) -> Self {
        match a {
            OutputActivation::Sigmoid => Activation::Sigmoid,
            OutputActivation::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSection {
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
    pub output_activation: Activation,
    #[serde(default)]
    pub beta: f64,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_ae_lr")]
    pub learning_rate: f64,
    /// First active latent width; defaults to `max(1, ⌈D/8⌉)`. Setting it to
    /// `latent_dim` trains a plain autoencoder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_dim: Option<usize>,
    /// Step at which the full width is reached; defaults to `steps / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_end_step: Option<usize>,
}

impl AutoencoderSection {
    pub fn model_config(&self, input_dim: usize) -> Result<AeConfig> {
        let config = AeConfig {
            input_dim,
            hidden_widths: self.hidden_widths.clone(),
            latent_dim: self.latent_dim,
            output_activation: self.output_activation.into(),
            beta: self.beta,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn schedule(&self) -> Result<MaskSchedule> {
        let default = MaskSchedule::default_for(self.latent_dim, self.steps)?;
        Ok(MaskSchedule::new(
            self.initial_dim.unwrap_or(default.initial_dim),
            self.latent_dim,
            self.ramp_end_step.unwrap_or(default.ramp_end_step),
            self.steps,
        )?)
    }
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

fn default_ae_lr() -> f64 {
    AE_LEARNING_RATE
}

fn default_lde_lr() -> f64 {
    LDE_LEARNING_RATE
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdeSection {
    #[serde(default = "default_mixtures")]
    pub mixture_count: usize,
    #[serde(default = "default_filter")]
    pub filter_size: usize,
    #[serde(default = "default_floor")]
    pub sigma_floor: f64,
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lde_lr")]
    pub learning_rate: f64,
}

fn default_mixtures() -> usize {
    DEFAULT_MIXTURE_COUNT
}

fn default_filter() -> usize {
    DEFAULT_FILTER_SIZE
}

fn default_floor() -> f64 {
    DEFAULT_SIGMA_FLOOR
}

impl LdeSection {
    pub fn model_config(&self, latent_dim: usize) -> Result<LdeConfig> {
        let mut config = LdeConfig::new(latent_dim, self.mixture_count)?.with_filter_size(self.filter_size)?;
        config.sigma_floor = self.sigma_floor;
        config.validate()?;
        Ok(config)
    }
}

/// Every random stream in the pipeline has its own named seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Toy sampling and dataset splits.
    pub data: u64,
    /// Weight initialization.
    pub init: u64,
    /// Mini-batch order.
    pub shuffle: u64,
    /// Ancestral sampling and evaluation randomness.
    pub sample: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_master(0)
    }
}

impl Seeds {
    /// Derives all named seeds from one value, as `--seed` does.
    pub fn from_master(seed: u64) -> Self {
        let derive = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        Self {
            data: derive(1),
            init: derive(2),
            shuffle: derive(3),
            sample: derive(4),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Number of generated samples.
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
    /// Log-spaced Parzen bandwidth grid.
    #[serde(default = "default_bw_min")]
    pub bandwidth_min: f64,
    #[serde(default = "default_bw_max")]
    pub bandwidth_max: f64,
    #[serde(default = "default_bw_count")]
    pub bandwidth_count: usize,
    /// Validation rows used to pick the bandwidth.
    #[serde(default = "default_bw_validation")]
    pub bandwidth_validation: usize,
    /// Test rows scored by Parzen and NLL evaluation.
    #[serde(default = "default_sample_count")]
    pub test_count: usize,
    #[serde(default = "default_trials")]
    pub causality_trials: usize,
    /// Test-set indices of the two interpolation endpoints.
    #[serde(default = "default_pair")]
    pub interp_pair: [usize; 2],
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

fn default_sample_count() -> usize {
    10_000
}

fn default_bw_min() -> f64 {
    0.01
}

fn default_bw_max() -> f64 {
    1.0
}

fn default_bw_count() -> usize {
    20
}

fn default_bw_validation() -> usize {
    1_000
}

fn default_trials() -> usize {
    100
}

fn default_pair() -> [usize; 2] {
    [0, 1]
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            sample_count: default_sample_count(),
            bandwidth_min: default_bw_min(),
            bandwidth_max: default_bw_max(),
            bandwidth_count: default_bw_count(),
            bandwidth_validation: default_bw_validation(),
            test_count: default_sample_count(),
            causality_trials: default_trials(),
            interp_pair: default_pair(),
            alphas: default_alphas(),
        }
    }
}

impl EvalSection {
    pub fn bandwidth_grid(&self) -> Vec<f64> {
        lde_core::eval::log_spaced(self.bandwidth_min, self.bandwidth_max, self.bandwidth_count)
    }
}

/// Named starting points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// D = 8, sigmoid output, reconstruction MSE only.
    Mnist,
    /// The 2-D toy set modelled directly by the density estimator.
    Toy,
    /// 48×48 grayscale images in a folder, D = 15, tanh output.
    PgmFolder,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Mnist, Preset::Toy, Preset::PgmFolder];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Mnist => "mnist",
            Preset::Toy => "toy",
            Preset::PgmFolder => "pgm-folder",
        }
    }

    pub fn config(self) -> ExperimentConfig {
        match self {
            Preset::Mnist => ExperimentConfig {
                dataset: DatasetConfig::Mnist {
                    path: PathBuf::from("data/mnist"),
                    train_limit: None,
                    validation_limit: None,
                    test_limit: None,
                },
                autoencoder: Some(AutoencoderSection {
                    hidden_widths: vec![512, 256],
                    latent_dim: 8,
                    output_activation: Activation::Sigmoid,
                    beta: 0.0,
                    steps: 20_000,
                    batch_size: DEFAULT_BATCH_SIZE,
                    learning_rate: AE_LEARNING_RATE,
                    initial_dim: None,
                    ramp_end_step: None,
                }),
                lde: LdeSection {
                    mixture_count: DEFAULT_MIXTURE_COUNT,
                    filter_size: DEFAULT_FILTER_SIZE,
                    sigma_floor: DEFAULT_SIGMA_FLOOR,
                    steps: 20_000,
                    batch_size: DEFAULT_BATCH_SIZE,
                    learning_rate: LDE_LEARNING_RATE,
                },
                seeds: Seeds::default(),
                eval: EvalSection::default(),
            },
            Preset::Toy => ExperimentConfig {
                dataset: DatasetConfig::Toy {
                    train: default_toy_train(),
                    validation: default_holdout(),
                    test: default_holdout(),
                },
                autoencoder: None,
                lde: LdeSection {
                    steps: 20_000,
                    ..Preset::Mnist.config().lde
                },
                seeds: Seeds::default(),
                eval: EvalSection {
                    sample_count: 20_000,
                    ..EvalSection::default()
                },
            },
            Preset::PgmFolder => {
                let mnist = Preset::Mnist.config();
                ExperimentConfig {
                    dataset: DatasetConfig::PgmFolder {
                        path: PathBuf::from("data/faces"),
                        validation: 500,
                        test: 500,
                    },
                    autoencoder: Some(AutoencoderSection {
                        hidden_widths: vec![1024, 256],
                        latent_dim: 15,
                        output_activation: Activation::Tanh,
                        ..mnist.autoencoder.unwrap()
                    }),
                    ..mnist
                }
            }
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown preset {s:?}")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate_values()?;
        Ok(config)
    }

    /// Reads a config file; relative dataset paths are resolved against the
    /// file's directory and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = config.dataset.path_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if !p.exists() {
                return Err(CliError::Config(format!("dataset path {} does not exist", p.display())));
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn validate_values(&self) -> Result<()> {
        if let Some(ae) = &self.autoencoder {
            // Input width is only known once data is loaded; 1 + D is the
            // smallest width that passes the undercompleteness check.
            ae.model_config(ae.latent_dim + 1)?;
            ae.schedule()?;
            if ae.batch_size == 0 || !ae.learning_rate.is_finite() || ae.learning_rate <= 0.0 {
                return Err(CliError::Config(
                    "autoencoder batch size and learning rate must be positive".into(),
                ));
            }
        }
        self.lde.model_config(1)?;
        if self.lde.batch_size == 0 || !self.lde.learning_rate.is_finite() || self.lde.learning_rate <= 0.0 {
            return Err(CliError::Config(
                "lde batch size and learning rate must be positive".into(),
            ));
        }
        let e = &self.eval;
        if !(e.bandwidth_min > 0.0 && e.bandwidth_max >= e.bandwidth_min) || e.bandwidth_count == 0 {
            return Err(CliError::Config("bandwidth grid must be positive and non-empty".into()));
        }
        if e.sample_count == 0 || e.test_count == 0 || e.causality_trials == 0 {
            return Err(CliError::Config("evaluation counts must be positive".into()));
        }
        if e.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(CliError::Config("interpolation weights must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Latent width the density estimator models.
    pub fn latent_dim(&self, data_dim: usize) -> usize {
        self.autoencoder.as_ref().map_or(data_dim, |ae| ae.latent_dim)
    }
}

impl DatasetConfig {
    fn path_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            DatasetConfig::Mnist { path, .. }
            | DatasetConfig::PgmFolder { path, .. }
            | DatasetConfig::Csv { path, .. } => Some(path),
            DatasetConfig::Toy { .. } => None,
        }
    }

    pub fn load(&self, seed: u64) -> Result<SplitDataset> {
        Ok(match self {
            DatasetConfig::Mnist {
                path,
                train_limit,
                validation_limit,
                test_limit,
            } => {
                let full = mnist_load(path)?;
                full.truncated(
                    train_limit.unwrap_or(usize::MAX),
                    validation_limit.unwrap_or(usize::MAX),
                    test_limit.unwrap_or(usize::MAX),
                )
            }
            DatasetConfig::Toy {
                train,
                validation,
                test,
            } => {
                let rows = ToySpec::default().sample(train + validation + test, seed)?;
                SplitDataset::split(&rows, *validation, *test, seed, "toy")?
            }
            DatasetConfig::PgmFolder { path, validation, test } => {
                let norm = Normalization::SIGNED_BYTES;
                let (rows, shape) = load_pgm_folder(path, norm)?;
                SplitDataset {
                    normalization: norm,
                    image_shape: Some(shape),
                    ..SplitDataset::split(&rows, *validation, *test, seed, format!("pgm:{}", path.display()))?
                }
            }
            DatasetConfig::Csv { path, validation, test } => {
                let (_, rows) = read_csv(path)?;
                SplitDataset::split(&rows, *validation, *test, seed, format!("csv:{}", path.display()))?
            }
        })
    }
}
