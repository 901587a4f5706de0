//! `absgen` experiment runner.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 missing file, 3 invalid
//! config or argument value, 4 parameters do not match the configured
//! model, 5 `n_way` exceeds the usable probe classes, 6 checksum mismatch,
//! 7 malformed data file, 64 command-line usage error.

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use absgen::corrupt::Corruption;
use absgen::data::Split;
use absgen::theory::TransferConfig;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::commands::Context;
use crate::config::Config;
use crate::error::{CliError, EXIT_USAGE};
use crate::output::{ensure_dir, unix_now, write_json, RunRecord};

#[derive(Debug, Parser)]
#[command(name = "absgen", version, about = "Pair-concatenation one-shot learning experiments")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for params, reports and run records.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads. Computation is single-threaded and the value is only
    /// recorded, so results never depend on it.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured model; writes params.absg, loss.csv and config.json.
    Train,
    /// Evaluate AUC and F1 on corrupted probe sets.
    Eval {
        /// Trained parameters (defaults to <out-dir>/params.absg).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Corruption to evaluate; repeat for several. Defaults to the config list.
        #[arg(long = "corruption")]
        corruptions: Vec<String>,
        /// Score pairs by their true label instead of a model.
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// N-way one-shot accuracy on the probe split.
    Oneshot {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        n_way: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, hide = true)]
        oracle: bool,
    },
    /// Hyperplane transfer on the synthetic latent model.
    Theory {
        /// Built-in model pair, used instead of the config's theory section.
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Write raw and corrupted probe images as PGM with their SSIM.
    CorruptPreview {
        #[arg(long)]
        corruption: String,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, value_enum, default_value_t = SplitArg::Probe)]
        split: SplitArg,
    },
    /// Check a dataset manifest's paths, digests and file formats.
    ValidateManifest {
        /// Manifest path (defaults to the config's dataset manifest).
        manifest: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    ShiftedBackground,
    SwappedMeans,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Probe,
}

fn load_config(path: Option<&Path>, required: bool) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p),
        None if required => Err(CliError::Config {
            field: "--config".into(),
            message: "this command needs a config file".into(),
        }),
        None => Ok(Config {
            experiment: "default".into(),
            ..Config::default()
        }),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value).map_err(absgen::Error::from)?);
    Ok(())
}

fn parse_corruptions(names: &[String]) -> Result<Vec<Corruption>, CliError> {
    names
        .iter()
        .map(|n| {
            n.parse().map_err(|e: absgen::Error| CliError::Config {
                field: "--corruption".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = unix_now();
    let clock = Instant::now();
    let needs_config = !matches!(cli.command, Command::Theory { .. } | Command::ValidateManifest { .. });
    let mut config = load_config(cli.config.as_deref(), needs_config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let name = match &cli.command {
        Command::Train => "train",
        Command::Eval { .. } => "eval",
        Command::Oneshot { .. } => "oneshot",
        Command::Theory { .. } => "theory",
        Command::CorruptPreview { .. } => "corrupt-preview",
        Command::ValidateManifest { .. } => "validate-manifest",
    };

    let outputs = match cli.command {
        Command::ValidateManifest { manifest } => {
            let path = match manifest {
                Some(p) => p,
                None => config.dataset()?.manifest.clone(),
            };
            print_json(&commands::validate_manifest(&path)?)?;
            return Ok(());
        }
        Command::Train => {
            let ctx = Context { config, out_dir: cli.out_dir.clone() };
            eprintln!("effective config:");
            print_json(&ctx.config)?;
            let (summary, files) = commands::train(&ctx)?;
            eprintln!("{}", serde_json::to_string(&summary).map_err(absgen::Error::from)?);
            (ctx, files)
        }
        Command::Eval { params, corruptions, oracle } => {
            if !corruptions.is_empty() {
                parse_corruptions(&corruptions)?;
                config.eval.corruptions = corruptions;
            }
            let ctx = Context { config, out_dir: cli.out_dir.clone() };
            let list = ctx.config.corruptions();
            let (set, files) = commands::eval(&ctx, params.as_deref(), &list, oracle)?;
            print_json(&set)?;
            (ctx, files)
        }
        Command::Oneshot { params, n_way, trials, oracle } => {
            if let Some(n) = n_way {
                config.oneshot.n_way = n;
            }
            if let Some(t) = trials {
                config.oneshot.trials = t;
            }
            config.validate()?;
            let (n, t) = (config.oneshot.n_way, config.oneshot.trials);
            let ctx = Context { config, out_dir: cli.out_dir.clone() };
            let (set, files) = commands::oneshot(&ctx, params.as_deref(), n, t, oracle)?;
            print_json(&set)?;
            (ctx, files)
        }
        Command::Theory { preset } => {
            let transfer = match preset {
                Some(Preset::ShiftedBackground) => TransferConfig::shifted_background(),
                Some(Preset::SwappedMeans) => TransferConfig::swapped_means(),
                None => config.theory.clone().unwrap_or_else(TransferConfig::shifted_background),
            };
            config.theory = Some(transfer.clone());
            config.validate()?;
            let ctx = Context { config, out_dir: cli.out_dir.clone() };
            let (report, files) = commands::theory(&ctx, &transfer)?;
            print_json(&report)?;
            (ctx, files)
        }
        Command::CorruptPreview { corruption, count, split } => {
            let c = parse_corruptions(&[corruption])?.remove(0);
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Probe => Split::Probe,
            };
            let ctx = Context { config, out_dir: cli.out_dir.clone() };
            let (preview, files) = commands::corrupt_preview(&ctx, &c, split, count)?;
            print_json(&preview)?;
            (ctx, files)
        }
    };

    let (ctx, files) = outputs;
    let record = RunRecord {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION"),
        fingerprint: ctx.fingerprint()?,
        seed: ctx.seed(),
        threads: cli.threads as usize,
        started_unix: started,
        elapsed_secs: clock.elapsed().as_secs_f64(),
        outputs: files,
    };
    ensure_dir(&ctx.out_dir)?;
    write_json(&ctx.out_dir.join(format!("run-{name}.json")), &record)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
