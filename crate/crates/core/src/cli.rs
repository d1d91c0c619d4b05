//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::checkpoint::load_checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{load_dataset, save_dataset, FeatureStore};
use crate::error::{Error, Result};
use crate::eval::evaluate_split;
use crate::experiment::{ablate, ablation_tsv, grid, AblationSpec};
use crate::losses::Metric;
use crate::sampler::{batch_stats, BatchSpec, Sampler, SamplerKind};
use crate::synth::generate;
use crate::trainer::{train, write_text};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "reid-forge",
    version,
    about = "Player re-identification metric-learning toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an embedding network.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the `dataset` key.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Overrides the `out_dir` key.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate embeddings on a dataset's test split.
    Eval(EvalArgs),
    /// Summarize batch composition of a sampler.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "hier")]
        sampler: SamplerKind,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        epochs: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the sampler × loss ablation grid.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the `jobs` key.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the `ablate_seeds` key.
        #[arg(long)]
        seeds: Option<usize>,
    },
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "embeddings", "raw"])))]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Network checkpoint used to embed the dataset features.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Precomputed embeddings, one row per feature index.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Rank the raw features.
    #[arg(long)]
    raw: bool,
    #[arg(long, default_value = "euclidean")]
    metric: Metric,
    /// Write per-query rankings here as TSV.
    #[arg(long)]
    rankings: Option<PathBuf>,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else if err.is_config() {
        EXIT_USAGE
    } else {
        EXIT_DATA
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(path: Option<&Path>, gen_seed: bool) -> Result<ExperimentConfig> {
    let mut config = match path {
        Some(p) => ExperimentConfig::load(p).map_err(|e| match e {
            // A missing config file is a usage problem, not bad data.
            Error::MissingFile(p) => {
                Error::Config(format!("config file {} not found", p.display()))
            }
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    config.apply_seed_env(gen_seed)?;
    config.validate()?;
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Gen { config, out: dir } => {
            let config = load_config(config.as_deref(), true)?;
            let dataset = generate(&config.gen)?;
            save_dataset(&dataset, &dir)?;
            write_text(&dir.join("config.txt"), &config.to_text())?;
            emit(
                out,
                &format!(
                    "samples={}\nactions={}\nmatches={}\nout={}\n",
                    dataset.samples().len(),
                    dataset.actions().len(),
                    dataset.matches().len(),
                    dir.display()
                ),
            )
        }
        Command::Train {
            config,
            dataset,
            out: out_dir,
        } => {
            let mut config = load_config(Some(&config), false)?;
            if dataset.is_some() {
                config.dataset = dataset;
            }
            if out_dir.is_some() {
                config.train.out_dir = out_dir;
            }
            let data_dir = config.dataset.clone().ok_or_else(|| {
                Error::Config("no dataset given (key `dataset` or --dataset)".into())
            })?;
            let dir = config.train.out_dir.clone().ok_or_else(|| {
                Error::Config("no output directory given (key `out_dir` or --out)".into())
            })?;
            let ds = load_dataset(&data_dir)?;
            create_dir(&dir)?;
            write_text(&dir.join("config.txt"), &config.to_text())?;
            let report = train(&ds, &config.train)?;
            let last = report.epochs.last().expect("epochs >= 1");
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:?}"));
            emit(
                out,
                &format!(
                    "epochs={}\nfinal_loss={:?}\nbest_epoch={}\nbest_mAP={}\nbest_R1={}\nbest_checkpoint={}\n",
                    report.epochs.len(),
                    last.loss,
                    report.best_epoch.map_or("-".to_string(), |e| e.to_string()),
                    fmt(report.best_map),
                    fmt(report.best_r1),
                    report
                        .best_checkpoint
                        .as_ref()
                        .map_or("-".to_string(), |p| p.display().to_string())
                ),
            )
        }
        Command::Eval(args) => {
            let ds = load_dataset(&args.dataset)?;
            let emb = if let Some(ckpt) = &args.checkpoint {
                load_checkpoint(ckpt)?.embed(&ds.features().to_tensor())?
            } else if let Some(path) = &args.embeddings {
                FeatureStore::read(path)?.to_tensor()
            } else {
                ds.features().to_tensor()
            };
            let report = evaluate_split(&ds, &emb, args.metric)?;
            if let Some(path) = &args.rankings {
                write_text(path, &report.rankings_tsv(&ds))?;
            }
            emit(out, &report.to_key_values(args.metric))
        }
        Command::Stats {
            dataset,
            sampler,
            k,
            m,
            epochs,
            seed,
        } => {
            let spec = BatchSpec::new(k, m)?;
            let seed = match std::env::var(crate::config::SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("{}: {e}", crate::config::SEED_ENV)))?,
                Err(_) => seed,
            };
            let ds = load_dataset(&dataset)?;
            let sampler = Sampler::new(sampler, &ds, spec, seed)?;
            let batches: Vec<_> = (0..epochs).flat_map(|e| sampler.epoch(e)).collect();
            let stats = batch_stats(&batches, &ds)?;
            emit(out, &stats.to_key_values())
        }
        Command::Ablate {
            config,
            out: dir,
            jobs,
            seeds,
        } => {
            let mut config = load_config(config.as_deref(), false)?;
            if let Some(j) = jobs {
                config.jobs = j;
            }
            if let Some(s) = seeds {
                config.ablate_seeds = s;
            }
            config.validate()?;
            let ds = match &config.dataset {
                Some(d) => load_dataset(d)?,
                None => generate(&config.gen)?,
            };
            create_dir(&dir)?;
            write_text(&dir.join("config.txt"), &config.to_text())?;
            let base_seed = config.train.seed;
            let spec = AblationSpec {
                base: &config.train,
                cells: grid(),
                seeds: (0..config.ablate_seeds as u64)
                    .map(|i| base_seed + i)
                    .collect(),
                gamma: config.ablate_gamma,
                delta: config.ablate_delta,
                jobs: config.jobs,
                out_dir: Some(&dir),
            };
            let results = ablate(&ds, &spec)?;
            let table = ablation_tsv(&results);
            write_text(&dir.join("ablation.tsv"), &table)?;
            emit(out, &table)
        }
    }
}
