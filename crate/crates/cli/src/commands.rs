//! The pipeline stages behind each subcommand. Every stage reads its inputs
//! from explicit paths (by default the artifacts an earlier stage left in the
//! same output directory) and writes its outputs into `out`.

use std::path::{Path, PathBuf};

use lde_core::data::csv::{read_csv, write_csv};
use lde_core::data::{BatchStream, SplitDataset};
use lde_core::eval::{
    bandwidth_grid_search, causality_check, interpolation_loglik, lde_loglik, parzen_loglik, BandwidthSearch, Estimate,
};
use lde_core::{Adam, AeModel, DenseArray, LdeModel};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{io_err, CliError, Result};
use crate::persist::{load_lde, save_lde, LatentSet, SavedAutoencoder};
use crate::render::{pgm_grid, svg_plot, Mark, Series, PALETTE};
use crate::report::Report;

pub const AE_CHECKPOINT: &str = "ae.ckpt";
pub const AE_LOSS: &str = "ae_loss.csv";
pub const LATENTS: &str = "latents.ckpt";
pub const LDE_CHECKPOINT: &str = "lde.ckpt";
pub const LDE_LOSS: &str = "lde_loss.csv";
pub const SAMPLES: &str = "samples.ckpt";
pub const SAMPLES_CSV: &str = "samples.csv";
pub const LATENT_SAMPLES_CSV: &str = "latent_samples.csv";
pub const SAMPLE_GRID: &str = "samples.pgm";
pub const INTERP_CSV: &str = "interp_curve.csv";
pub const INTERP_STRIP: &str = "interp.pgm";

/// Decoded samples are also written as CSV up to this width.
const CSV_MAX_COLUMNS: usize = 16;
const GRID_IMAGES: usize = 100;
const CHUNK: usize = 4096;

pub fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(io_err(out))
}

fn column_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn write_table(path: &Path, header: &[String], rows: &DenseArray) -> Result<()> {
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(write_csv(path, &header, rows)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Applies `f` to row chunks of `x` and stacks the results.
fn chunked(x: &DenseArray, f: impl Fn(&DenseArray) -> lde_core::Result<DenseArray>) -> Result<DenseArray> {
    let mut data = Vec::new();
    let mut width = 0;
    for start in (0..x.rows()).step_by(CHUNK) {
        let y = f(&x.slice_rows(start, (start + CHUNK).min(x.rows())))?;
        width = y.row_len();
        data.extend_from_slice(y.data());
    }
    if x.rows() == 0 {
        return Ok(f(x)?);
    }
    Ok(DenseArray::new(vec![x.rows(), width], data)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub losses: Vec<f64>,
    pub checkpoint: PathBuf,
}

impl TrainSummary {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn train_ae(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    let section = cfg
        .autoencoder
        .as_ref()
        .ok_or_else(|| CliError::Config("no [autoencoder] section".into()))?;
    prepare_out(out)?;
    let data = cfg.dataset.load(cfg.seeds.data)?;
    let schedule = section.schedule()?;
    let mut model = AeModel::init(section.model_config(data.dim())?, cfg.seeds.init)?;
    let mut adam = Adam::for_model(&model, section.learning_rate)?;
    let mut stream = BatchStream::new(&data.train, section.batch_size, cfg.seeds.shuffle)?;
    let mut log = Vec::with_capacity(3 * section.steps);
    let mut losses = Vec::with_capacity(section.steps);
    for step in 0..section.steps {
        let report = model.train_step(&mut adam, &stream.next_batch(), Some(&schedule), step, None)?;
        log.extend([step as f64, report.loss, report.effective_dim as f64]);
        losses.push(report.loss);
    }
    let header = ["step", "loss", "effective_dim"].map(String::from);
    write_table(
        &out.join(AE_LOSS),
        &header,
        &DenseArray::new(vec![section.steps, 3], log)?,
    )?;
    let saved = SavedAutoencoder {
        model,
        normalization: data.normalization,
        image_shape: data.image_shape,
    };
    let checkpoint = out.join(AE_CHECKPOINT);
    saved.save(&checkpoint)?;
    Ok(TrainSummary { losses, checkpoint })
}

pub fn extract_latents(cfg: &ExperimentConfig, ae_path: &Path, out: &Path) -> Result<LatentSet> {
    prepare_out(out)?;
    let ae = SavedAutoencoder::load(ae_path)?;
    let data = cfg.dataset.load(cfg.seeds.data)?;
    if data.dim() != ae.model.config().input_dim {
        return Err(CliError::Mismatch(format!(
            "dataset rows have {} values, the autoencoder expects {}",
            data.dim(),
            ae.model.config().input_dim
        )));
    }
    let encode = |x: &DenseArray| chunked(x, |c| ae.model.encode(c));
    let set = LatentSet {
        train: encode(&data.train)?,
        validation: encode(&data.validation)?,
        test: encode(&data.test)?,
    };
    set.save(&out.join(LATENTS))?;
    Ok(set)
}

/// Rows the density estimator is fitted to: encoded latents when the config
/// has an autoencoder, the data itself otherwise.
pub fn lde_training_set(cfg: &ExperimentConfig, latents: Option<&Path>) -> Result<LatentSet> {
    match (&cfg.autoencoder, latents) {
        (Some(ae), Some(path)) => {
            let set = LatentSet::load(path)?;
            if set.latent_dim() != ae.latent_dim {
                return Err(CliError::Mismatch(format!(
                    "latent file has dimension {}, config declares {}",
                    set.latent_dim(),
                    ae.latent_dim
                )));
            }
            Ok(set)
        }
        (Some(_), None) => Err(CliError::Config(
            "a latent file is required when an autoencoder is configured".into(),
        )),
        (None, _) => {
            let SplitDataset {
                train,
                validation,
                test,
                ..
            } = cfg.dataset.load(cfg.seeds.data)?;
            Ok(LatentSet {
                train,
                validation,
                test,
            })
        }
    }
}

pub fn train_lde(cfg: &ExperimentConfig, latents: Option<&Path>, out: &Path) -> Result<TrainSummary> {
    prepare_out(out)?;
    let set = lde_training_set(cfg, latents)?;
    let (model, losses) = fit_lde(cfg, &set.train)?;
    let rows = DenseArray::new(
        vec![losses.len(), 2],
        losses.iter().enumerate().flat_map(|(i, &l)| [i as f64, l]).collect(),
    )?;
    write_table(&out.join(LDE_LOSS), &["step", "loss"].map(String::from), &rows)?;
    let checkpoint = out.join(LDE_CHECKPOINT);
    save_lde(&model, &checkpoint)?;
    Ok(TrainSummary { losses, checkpoint })
}

/// Trains a fresh estimator on `train` with the config's settings.
pub fn fit_lde(cfg: &ExperimentConfig, train: &DenseArray) -> Result<(LdeModel, Vec<f64>)> {
    let s = &cfg.lde;
    let mut model = LdeModel::init(s.model_config(train.row_len())?, cfg.seeds.init)?;
    let mut adam = Adam::for_model(&model, s.learning_rate)?;
    let mut stream = BatchStream::new(train, s.batch_size, cfg.seeds.shuffle)?;
    let losses = (0..s.steps)
        .map(|_| model.train_step(&mut adam, &stream.next_batch()))
        .collect::<lde_core::Result<Vec<_>>>()?;
    Ok((model, losses))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub latents: DenseArray,
    /// Decoded samples, or the latents themselves without an autoencoder.
    pub samples: DenseArray,
}

pub fn generate(ae_path: Option<&Path>, lde_path: &Path, n: usize, seed: u64, out: &Path) -> Result<Generated> {
    prepare_out(out)?;
    let lde = load_lde(lde_path)?;
    let ae = ae_path.map(SavedAutoencoder::load).transpose()?;
    if let Some(ae) = &ae {
        if ae.model.config().latent_dim != lde.config().latent_dim {
            return Err(CliError::Mismatch(format!(
                "autoencoder latent dimension {} differs from the estimator's {}",
                ae.model.config().latent_dim,
                lde.config().latent_dim
            )));
        }
    }
    let latents = lde.sample(n, seed)?;
    let samples = match &ae {
        Some(ae) => chunked(&latents, |z| ae.model.decode(z))?,
        None => latents.clone(),
    };
    write_table(
        &out.join(LATENT_SAMPLES_CSV),
        &column_names("z", latents.row_len()),
        &latents,
    )?;
    let mut ckpt = Checkpoint::new("kind = \"samples\"\n");
    ckpt.push("latents", latents.clone())?;
    ckpt.push("samples", samples.clone())?;
    ckpt.write(&out.join(SAMPLES))?;
    if samples.row_len() <= CSV_MAX_COLUMNS {
        write_table(&out.join(SAMPLES_CSV), &column_names("x", samples.row_len()), &samples)?;
    }
    if let Some(SavedAutoencoder {
        image_shape: Some(shape),
        normalization,
        ..
    }) = &ae
    {
        let shown = samples.slice_rows(0, samples.rows().min(GRID_IMAGES));
        write_bytes(&out.join(SAMPLE_GRID), &pgm_grid(&shown, *shape, 10, *normalization))?;
    }
    Ok(Generated { latents, samples })
}

pub fn load_samples(path: &Path) -> Result<DenseArray> {
    Ok(Checkpoint::read(path)?.get("samples")?.clone())
}

/// Parzen score of a generated sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct ParzenResult {
    pub search: BandwidthSearch,
    pub generated: Estimate,
    /// Same bandwidth, support replaced by held-out real rows.
    pub real: Option<Estimate>,
}

/// Picks the bandwidth for `support` on `validation`, then scores `test`;
/// with `real_support`, also scores `test` under a window on real data with
/// the same bandwidth.
pub fn parzen_eval(
    support: &DenseArray,
    validation: &DenseArray,
    test: &DenseArray,
    grid: &[f64],
    real_support: Option<&DenseArray>,
) -> Result<ParzenResult> {
    let search = bandwidth_grid_search(support, validation, grid)?;
    let generated = parzen_loglik(support, search.best_sigma, test)?;
    let real = real_support
        .map(|r| parzen_loglik(r, search.best_sigma, test))
        .transpose()?;
    Ok(ParzenResult {
        search,
        generated,
        real,
    })
}

pub fn eval_parzen(cfg: &ExperimentConfig, samples_path: &Path, out: &Path) -> Result<Report> {
    prepare_out(out)?;
    let samples = load_samples(samples_path)?;
    let data = cfg.dataset.load(cfg.seeds.data)?;
    let e = &cfg.eval;
    let bw_rows = e.bandwidth_validation.min(data.validation.rows());
    let validation = data.validation.slice_rows(0, bw_rows);
    let real = data.validation.slice_rows(bw_rows, data.validation.rows());
    let test = data.test.slice_rows(0, e.test_count.min(data.test.rows()));
    let result = parzen_eval(
        &samples,
        &validation,
        &test,
        &e.bandwidth_grid(),
        (real.rows() > 0).then_some(&real),
    )?;
    let mut report = Report::default();
    report
        .value("parzen.sigma", result.search.best_sigma)
        .value(
            "parzen.sigma_at_grid_edge",
            f64::from(u8::from(result.search.at_grid_edge())),
        )
        .estimate("parzen.loglik", &result.generated);
    if let Some(real) = &result.real {
        report.estimate("parzen.loglik_real_support", real);
    }
    report.write(out, "parzen")?;
    Ok(report)
}

pub fn eval_nll(cfg: &ExperimentConfig, lde_path: &Path, latents: Option<&Path>, out: &Path) -> Result<Report> {
    prepare_out(out)?;
    let lde = load_lde(lde_path)?;
    let set = lde_training_set(cfg, latents)?;
    let test = set.test.slice_rows(0, cfg.eval.test_count.min(set.test.rows()));
    let mut report = Report::default();
    report.estimate("lde.test_loglik", &lde_loglik(&lde, &test)?);
    report.estimate("lde.test_nll_per_dim", &{
        let ll = lde_loglik(&lde, &test)?;
        let d = lde.config().latent_dim as f64;
        Estimate {
            mean: -ll.mean / d,
            std_error: ll.std_error / d,
            count: ll.count,
        }
    });
    report.write(out, "nll")?;
    Ok(report)
}

pub fn eval_interp(cfg: &ExperimentConfig, ae_path: &Path, lde_path: &Path, out: &Path) -> Result<Report> {
    prepare_out(out)?;
    let ae = SavedAutoencoder::load(ae_path)?;
    let lde = load_lde(lde_path)?;
    let data = cfg.dataset.load(cfg.seeds.data)?;
    let [i, j] = cfg.eval.interp_pair;
    if i.max(j) >= data.test.rows() {
        return Err(CliError::Config(format!(
            "interpolation pair {:?} outside the {} test rows",
            cfg.eval.interp_pair,
            data.test.rows()
        )));
    }
    let curve = interpolation_loglik(&ae.model, &lde, data.test.row(i), data.test.row(j), &cfg.eval.alphas)?;
    let rows = DenseArray::new(
        vec![curve.alphas.len(), 2],
        curve
            .alphas
            .iter()
            .zip(&curve.log_likelihood)
            .flat_map(|(&a, &l)| [a, l])
            .collect(),
    )?;
    write_table(&out.join(INTERP_CSV), &["alpha", "loglik"].map(String::from), &rows)?;
    if let Some(shape) = ae.image_shape {
        let strip = pgm_grid(&curve.decoded, shape, curve.alphas.len(), ae.normalization);
        write_bytes(&out.join(INTERP_STRIP), &strip)?;
    }
    let mut report = Report::default();
    for (a, l) in curve.alphas.iter().zip(&curve.log_likelihood) {
        report.value(format!("interp.loglik.alpha_{a}"), *l);
    }
    report.write(out, "interp")?;
    Ok(report)
}

pub fn eval_causality(cfg: &ExperimentConfig, lde_path: &Path, out: &Path) -> Result<Report> {
    prepare_out(out)?;
    let lde = load_lde(lde_path)?;
    let result = causality_check(&lde, cfg.eval.causality_trials, cfg.seeds.sample)?;
    let mut report = Report::default();
    report
        .value("causality.trials", result.trials as f64)
        .value("causality.passed", f64::from(u8::from(result.passed())));
    if let Some(c) = &result.counterexample {
        report
            .value("causality.failing_coordinate", c.coordinate as f64)
            .value("causality.failing_position", c.position as f64);
    }
    report.write(out, "causality")?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// First two columns of each file as a point cloud; earlier files below.
    Scatter,
    /// First column against every other column.
    Curve,
}

pub fn plot(inputs: &[PathBuf], kind: PlotKind, title: &str, out_file: &Path) -> Result<()> {
    let mut series = Vec::new();
    for path in inputs {
        let (header, rows) = read_csv(path)?;
        let name = path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        if header.len() < 2 {
            return Err(CliError::Mismatch(format!(
                "{} has {} columns, need 2",
                path.display(),
                header.len()
            )));
        }
        match kind {
            PlotKind::Scatter => series.push(Series {
                label: name,
                points: rows.row_iter().map(|r| (r[0], r[1])).collect(),
                mark: Mark::Points,
                color: PALETTE[series.len() % PALETTE.len()],
            }),
            PlotKind::Curve => {
                for c in 1..header.len() {
                    series.push(Series {
                        label: format!("{name}: {}", header[c]),
                        points: rows.row_iter().map(|r| (r[0], r[c])).collect(),
                        mark: Mark::Line,
                        color: PALETTE[series.len() % PALETTE.len()],
                    });
                }
            }
        }
    }
    if let Some(parent) = out_file.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_out(parent)?;
    }
    write_bytes(out_file, svg_plot(&series, title).as_bytes())
}
