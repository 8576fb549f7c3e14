use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lde_cli::commands::{self, PlotKind};
use lde_cli::{ExperimentConfig, Preset, Result, Seeds};

/// Autoencoder + latent density estimator pipeline.
#[derive(Parser)]
#[command(name = "lde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Derive every named seed from this value instead of the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; also where inputs from earlier stages are looked up.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seeds = Seeds::from_master(seed);
        }
        commands::prepare_out(&self.out)?;
        let resolved = self.out.join("config.toml");
        std::fs::write(&resolved, cfg.to_toml()?).map_err(|source| lde_cli::CliError::Io { path: resolved, source })?;
        Ok(cfg)
    }

    fn artifact(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join(default))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the autoencoder with the incremental latent schedule.
    TrainAe {
        #[command(flatten)]
        common: Common,
    },
    /// Encode every dataset split with a trained autoencoder.
    ExtractLatents {
        #[command(flatten)]
        common: Common,
        /// Autoencoder checkpoint; defaults to `<out>/ae.ckpt`.
        #[arg(long)]
        ae: Option<PathBuf>,
    },
    /// Fit the latent density estimator.
    TrainLde {
        #[command(flatten)]
        common: Common,
        /// Latent checkpoint; defaults to `<out>/latents.ckpt` when an autoencoder is configured.
        #[arg(long)]
        latents: Option<PathBuf>,
    },
    /// Sample latents ancestrally and decode them.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Autoencoder checkpoint; defaults to `<out>/ae.ckpt`.
        #[arg(long)]
        ae: Option<PathBuf>,
        /// LDE checkpoint; defaults to `<out>/lde.ckpt`.
        #[arg(long)]
        lde: Option<PathBuf>,
        /// Number of samples; defaults to the config's `eval.sample_count`.
        #[arg(short, long)]
        n: Option<usize>,
    },
    /// Evaluate trained models.
    Eval {
        #[arg(value_enum)]
        which: EvalKind,
        #[command(flatten)]
        common: Common,
        /// Autoencoder checkpoint; defaults to `<out>/ae.ckpt`.
        #[arg(long)]
        ae: Option<PathBuf>,
        /// LDE checkpoint; defaults to `<out>/lde.ckpt`.
        #[arg(long)]
        lde: Option<PathBuf>,
        /// Latent checkpoint; defaults to `<out>/latents.ckpt` when an autoencoder is configured.
        #[arg(long)]
        latents: Option<PathBuf>,
        /// Sample checkpoint; defaults to `<out>/samples.ckpt`.
        #[arg(long)]
        samples: Option<PathBuf>,
    },
    /// Render CSV files as an 800×800 SVG.
    Plot {
        /// CSV inputs; for scatter plots the first is drawn beneath the rest.
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "scatter")]
        kind: Kind,
        /// File name of the SVG written into `--out`.
        #[arg(long, default_value = "plot.svg")]
        name: String,
        #[arg(long, default_value = "")]
        title: String,
        /// Accepted for uniformity with the other commands; unused.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Accepted for uniformity with the other commands; unused.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a preset config.
    Preset {
        #[arg(value_parser = parse_preset)]
        name: Preset,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    Parzen,
    Nll,
    Interp,
    Causality,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Scatter,
    Curve,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: lde_cli::CliError| e.to_string())
}

fn print_report(report: &lde_cli::report::Report) {
    print!("{}", report.to_text());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainAe { common } => {
            let cfg = common.load()?;
            let summary = commands::train_ae(&cfg, &common.out)?;
            println!("final loss = {}", summary.final_loss());
            println!("checkpoint = {}", summary.checkpoint.display());
        }
        Command::ExtractLatents { common, ae } => {
            let cfg = common.load()?;
            let set = commands::extract_latents(&cfg, &common.artifact(&ae, commands::AE_CHECKPOINT), &common.out)?;
            println!(
                "encoded {} / {} / {} rows to dimension {}",
                set.train.rows(),
                set.validation.rows(),
                set.test.rows(),
                set.latent_dim()
            );
        }
        Command::TrainLde { common, latents } => {
            let cfg = common.load()?;
            let latents = cfg
                .autoencoder
                .is_some()
                .then(|| common.artifact(&latents, commands::LATENTS));
            let summary = commands::train_lde(&cfg, latents.as_deref(), &common.out)?;
            println!("final loss = {}", summary.final_loss());
            println!("checkpoint = {}", summary.checkpoint.display());
        }
        Command::Generate { common, ae, lde, n } => {
            let cfg = common.load()?;
            let ae = cfg
                .autoencoder
                .is_some()
                .then(|| common.artifact(&ae, commands::AE_CHECKPOINT));
            let generated = commands::generate(
                ae.as_deref(),
                &common.artifact(&lde, commands::LDE_CHECKPOINT),
                n.unwrap_or(cfg.eval.sample_count),
                cfg.seeds.sample,
                &common.out,
            )?;
            println!("generated {} samples", generated.samples.rows());
        }
        Command::Eval {
            which,
            common,
            ae,
            lde,
            latents,
            samples,
        } => {
            let cfg = common.load()?;
            let out: &Path = &common.out;
            let lde = common.artifact(&lde, commands::LDE_CHECKPOINT);
            let report = match which {
                EvalKind::Parzen => commands::eval_parzen(&cfg, &common.artifact(&samples, commands::SAMPLES), out)?,
                EvalKind::Nll => {
                    let latents = cfg
                        .autoencoder
                        .is_some()
                        .then(|| common.artifact(&latents, commands::LATENTS));
                    commands::eval_nll(&cfg, &lde, latents.as_deref(), out)?
                }
                EvalKind::Interp => {
                    commands::eval_interp(&cfg, &common.artifact(&ae, commands::AE_CHECKPOINT), &lde, out)?
                }
                EvalKind::Causality => commands::eval_causality(&cfg, &lde, out)?,
            };
            print_report(&report);
        }
        Command::Plot {
            inputs,
            kind,
            name,
            title,
            out,
            ..
        } => {
            let kind = match kind {
                Kind::Scatter => PlotKind::Scatter,
                Kind::Curve => PlotKind::Curve,
            };
            let file = out.join(name);
            commands::plot(&inputs, kind, &title, &file)?;
            println!("wrote {}", file.display());
        }
        Command::Preset { name } => print!("{}", name.config().to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
