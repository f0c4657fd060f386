//! Library side of the `dipa` command-line tool.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use dipa::training::TrainVariant;

use crate::commands::EvalSource;
use crate::config::{RunConfig, RESOLVED_CONFIG};
use crate::error::{CliError, CliResult};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "DIPA_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "dipa",
    version,
    about = "Multimodal trajectory prediction: data, training, evaluation, ablation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Run configuration (TOML). Defaults apply to anything it omits.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic (or imported) train.jsonl and eval.jsonl.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Import this trajectory CSV instead of synthesizing scenarios.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one variant on a dataset file or a directory holding train.jsonl.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        variant: Option<TrainVariant>,
    },
    /// Score a checkpoint (or stored predictions) on a dataset file or a directory holding eval.jsonl.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file or training output directory.
        #[arg(
            long,
            required_unless_present = "predictions",
            conflicts_with = "predictions"
        )]
        model: Option<PathBuf>,
        /// Predictions JSONL to score instead of running a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Comma-separated horizons in seconds.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<f64>>,
    },
    /// Train every variant on a generated directory and sweep k_n.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<f64>>,
    },
    /// Merge metrics from runs (metrics.json files, eval or ablation directories) into one table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Applies `DIPA_THREADS` to the global pool.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!("{THREADS_ENV}={raw} is not a positive integer"))
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("{THREADS_ENV}: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn resolved(
    config: Option<&Path>,
    fallback: Option<&Path>,
    seed: Option<u64>,
    edit: impl FnOnce(&mut RunConfig),
) -> CliResult<RunConfig> {
    let mut cfg = match (config, fallback) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(p)) if p.is_file() => {
            log::info!("using {}", p.display());
            RunConfig::load(p)?
        }
        _ => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    edit(&mut cfg);
    cfg.resolve()
}

fn model_dir(path: &Path) -> Option<PathBuf> {
    if path.is_dir() {
        Some(path.to_path_buf())
    } else {
        path.parent().map(Path::to_path_buf)
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Generate { common, data } => {
            let cfg = resolved(common.config.as_deref(), None, common.seed, |c| {
                c.paths.data = data.clone();
                c.paths.out = Some(common.out.clone());
            })?;
            commands::cmd_generate(&cfg, data.as_deref(), &common.out)
        }
        Command::Train {
            common,
            data,
            variant,
        } => {
            let cfg = resolved(common.config.as_deref(), None, common.seed, |c| {
                if let Some(v) = variant {
                    c.variant = v;
                }
                c.paths.data = Some(data.clone());
                c.paths.out = Some(common.out.clone());
            })?;
            commands::cmd_train(&cfg, &data, &common.out)
        }
        Command::Eval {
            common,
            data,
            model,
            predictions,
            horizons,
        } => {
            // A training directory carries the config the checkpoint was built with.
            let fallback = model
                .as_deref()
                .and_then(model_dir)
                .map(|d| d.join(RESOLVED_CONFIG));
            let cfg = resolved(
                common.config.as_deref(),
                fallback.as_deref(),
                common.seed,
                |c| {
                    if let Some(h) = horizons {
                        c.metrics.horizons_s = h;
                    }
                    c.paths.data = Some(data.clone());
                    c.paths.model = model.clone();
                    c.paths.out = Some(common.out.clone());
                },
            )?;
            let source = match (&model, &predictions) {
                (Some(m), _) => EvalSource::Model(m),
                (None, Some(p)) => EvalSource::Predictions(p),
                (None, None) => {
                    return Err(CliError::Config(
                        "eval needs --model or --predictions".into(),
                    ))
                }
            };
            commands::cmd_eval(&cfg, source, &data, &common.out).map(|_| ())
        }
        Command::Ablate {
            common,
            data,
            horizons,
        } => {
            let cfg = resolved(common.config.as_deref(), None, common.seed, |c| {
                if let Some(h) = horizons {
                    c.metrics.horizons_s = h;
                }
                c.paths.data = Some(data.clone());
                c.paths.out = Some(common.out.clone());
            })?;
            commands::cmd_ablate(&cfg, &data, &common.out).map(|_| ())
        }
        Command::Report { runs, out } => commands::cmd_report(&runs, &out).map(|_| ()),
    }
}
