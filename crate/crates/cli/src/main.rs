//! `stemsynth`: calibrate noise profiles from STEM frames, synthesize paired
//! datasets, run classical enhancement baselines and score the results.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::{error, info};

use commands::Split;
use config::{parse_set, ConfigFile};
use stemsynth::Mode;

#[derive(Parser, Debug)]
#[command(name = "stemsynth", version, about)]
struct Cli {
    /// Random seed. `synthesize` draws one and logs it when unset;
    /// `calibrate` uses it for the shape-correction simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Flat TOML file of defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a noise profile to every frame of a directory or dataset.
    Calibrate {
        /// Directory of PNG frames, a single PNG, or a dataset root.
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Imaging mode: haadf or bf (dataset roots default to their own).
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, value_enum)]
        split: Option<Split>,
        /// Write std-vs-gradient, std-vs-value and PPCC plots.
        #[arg(long)]
        plots: bool,
        /// Calibration tunable, e.g. `--set sigma_row=2.5`.
        #[arg(long = "set", value_parser = parse_set)]
        sets: Vec<(String, String)>,
    },
    /// Generate a paired noisy/clean dataset with a manifest.
    Synthesize {
        #[arg(short, long)]
        out: PathBuf,
        /// Built-in profile statistics: haadf-real or bf-real.
        #[arg(long)]
        preset: Option<String>,
        /// Profile statistics file written by `calibrate`.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        /// Synthesis tunable, e.g. `--set size=128`.
        #[arg(long = "set", value_parser = parse_set)]
        sets: Vec<(String, String)>,
    },
    /// Apply a classical filter to frames and score against references.
    Enhance {
        /// PNG file, directory of PNGs, or dataset root (uses its clean images
        /// as references).
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// wiener, bilateral, absf or fftpeak.
        #[arg(long)]
        method: Option<String>,
        /// Reference directory (or dataset root) matched by file name.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<Split>,
        /// Filter parameter, e.g. `--set keep_fraction=0.05`.
        #[arg(long = "set", value_parser = parse_set)]
        sets: Vec<(String, String)>,
    },
    /// PSNR and SSIM of output images against references with the same names.
    Evaluate {
        outputs: PathBuf,
        references: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<Split>,
    },
    /// Realism table (KLD, R²) between two corpora of noise profiles.
    CompareDatasets {
        /// Calibration output directory or dataset root.
        a: PathBuf,
        /// Reference corpus, same kinds as `a`.
        b: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<Split>,
    },
}

fn fresh_seed() -> u64 {
    use std::hash::{BuildHasher, Hasher};
    let mut h = std::collections::hash_map::RandomState::new().build_hasher();
    h.write_u128(
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos()),
    );
    h.finish()
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let verbose = file.pick(Some(cli.verbose).filter(|v| *v > 0), "verbose")?.unwrap_or(0);
    let level = match verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    info!("stemsynth {}", stemsynth::VERSION);
    if let Some(p) = &cli.config {
        info!("config file: {}", p.display());
    }

    let workers: Option<usize> = file.pick(cli.workers, "workers")?;
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    info!("workers: {}", rayon::current_num_threads());
    let seed: Option<u64> = file.pick(cli.seed, "seed")?;
    let split =
        |flag: Option<Split>, default: Split| -> Result<Split> { Ok(file.pick(flag, "split")?.unwrap_or(default)) };

    match cli.command {
        Command::Calibrate {
            input,
            out,
            mode,
            split: sp,
            plots,
            sets,
        } => {
            let mode = match file.pick::<String>(None, "mode")? {
                Some(m) if mode.is_none() => Some(m.parse()?),
                _ => mode,
            };
            let args = commands::CalibrateArgs {
                input,
                out,
                mode,
                split: split(sp, Split::All)?,
                plots: plots || file.pick(None, "plots")?.unwrap_or(false),
                seed,
                sets,
            };
            commands::calibrate(args, &file)
        }
        Command::Synthesize {
            out,
            preset,
            stats,
            n_train,
            n_test,
            sets,
        } => {
            let seed = seed.unwrap_or_else(|| {
                let s = fresh_seed();
                info!("no seed given; drew {s}");
                s
            });
            let args = commands::SynthesizeArgs {
                out,
                preset: file.pick(preset, "preset")?,
                stats: file.pick(stats, "stats")?,
                n_train: file.pick(n_train, "n-train")?.unwrap_or(1000),
                n_test: file.pick(n_test, "n-test")?.unwrap_or(100),
                seed,
                sets,
            };
            commands::synthesize(args, &file)
        }
        Command::Enhance {
            input,
            out,
            method,
            reference,
            split: sp,
            sets,
        } => {
            let args = commands::EnhanceArgs {
                input,
                out,
                method: file.pick(method, "method")?.unwrap_or_else(|| "fftpeak".to_string()),
                reference: file.pick(reference, "reference")?,
                split: split(sp, Split::Test)?,
                sets,
            };
            commands::enhance(args, &file)
        }
        Command::Evaluate {
            outputs,
            references,
            out,
            split: sp,
        } => {
            let args = commands::EvaluateArgs {
                outputs,
                references,
                out,
                split: split(sp, Split::Test)?,
            };
            commands::evaluate(args, &file)
        }
        Command::CompareDatasets { a, b, out, split: sp } => {
            let args = commands::CompareArgs {
                a,
                b,
                out,
                split: split(sp, Split::All)?,
            };
            commands::compare(args, &file)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // the logger may not be up yet if the config file was bad
            if log::log_enabled!(log::Level::Error) {
                error!("{e:#}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}
