use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use scoreformer::cli::{self, BenchmarkSettings, EvalOptions, SplitName, Variant};
use scoreformer::model::Checkpoint;
use scoreformer::pipeline::{make_data, write_dataset, PreparedDataset};
use scoreformer::train::TrainConfig;
use scoreformer::{Error, Result};

#[derive(Parser)]
#[command(
    name = "scoreformer",
    version,
    about = "Docking-score surrogate models over molecular graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Training configuration TOML; unspecified fields come from its preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides a config key, e.g. `--set model.use_rwpe=false`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let mut tc = TrainConfig::from_toml(&text, &self.overrides)?;
        if let Some(seed) = self.seed {
            tc.seed = seed;
        }
        info!("seed {}", tc.seed);
        info!("resolved config:\n{}", tc.to_toml());
        Ok(tc)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic `id,smiles,score` dataset.
    MakeData {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.25)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parses, featurizes and caches RWPE for a dataset CSV.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        /// Random-walk length.
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a model; writes model.ckpt, train_log.csv and config.toml.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes `id,prediction` for records of a prepared dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// all, train, val or test (the checkpoint's split).
        #[arg(long, default_value = "all")]
        split: String,
        /// Comma-separated ids; an empty value selects nothing.
        #[arg(long)]
        ids: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores predictions against true scores.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        /// Prepared dataset or `id,smiles,score` CSV.
        #[arg(long)]
        truth: PathBuf,
        /// Takes wMSE alpha and hit fraction from the checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        hit_fraction: Option<f64>,
        /// Also write RTC curves and the recall surface.
        #[arg(long)]
        curves: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measures inference throughput.
    Benchmark {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        checkpoint: Option<PathBuf>,
        /// Untrained preset model instead of a checkpoint.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the base configuration and ablated variants side by side.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// no-rwpe, gcn or no-rwpe+gcn; repeatable.
        #[arg(long = "variant", required = true)]
        variants: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::MakeData { n, seed, noise, out } => {
            info!("make-data n={n} seed={seed} noise={noise}");
            ensure_parent(&out)?;
            write_dataset(&out, &make_data(n, seed, noise)?)?;
            info!("wrote {}", out.display());
        }
        Command::Preprocess { input, k, out } => {
            info!("preprocess {} k={k}", input.display());
            ensure_parent(&out)?;
            let s = cli::preprocess(&input, k, &out)?;
            info!(
                "kept {} records, rejected {} (see {})",
                s.kept,
                s.rejected,
                s.rejections_path.display()
            );
        }
        Command::Train { data, config, out } => {
            let tc = config.resolve()?;
            let (_, log) = cli::train_command(&tc, &data, &out)?;
            if let Some(e) = log.selected() {
                info!(
                    "selected epoch {}: val_wmse {:.5} val_f1 {:.4}",
                    e.epoch, e.val_wmse, e.val_f1
                );
            }
        }
        Command::Predict {
            checkpoint,
            data,
            split,
            ids,
            out,
        } => {
            let ids: Option<Vec<String>> = ids.map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(String::from)
                    .collect()
            });
            ensure_parent(&out)?;
            let rows = cli::predict_command(&checkpoint, &data, SplitName::from_name(&split)?, ids.as_deref(), &out)?;
            info!("wrote {} predictions to {}", rows.len(), out.display());
        }
        Command::Evaluate {
            predictions,
            truth,
            checkpoint,
            alpha,
            hit_fraction,
            curves,
            out,
        } => {
            let opts = EvalOptions {
                checkpoint,
                wmse_alpha: alpha,
                hit_fraction,
                curves,
            };
            ensure_parent(&out)?;
            let report = cli::evaluate_command(&predictions, &truth, &opts, &out)?;
            print!("{}", report.to_text());
        }
        Command::Benchmark {
            data,
            checkpoint,
            preset,
            seed,
            batch_size,
            repetitions,
            warmup,
            out,
        } => {
            let prepared = PreparedDataset::load(&data)?;
            let model = match (checkpoint, preset) {
                (Some(p), _) => Checkpoint::load(&p)?.model,
                (None, Some(name)) => cli::preset_model(&name, &prepared, seed)?,
                (None, None) => unreachable!("clap requires one of --checkpoint or --preset"),
            };
            let settings = BenchmarkSettings {
                batch_size,
                repetitions,
                warmup,
            };
            let report = cli::benchmark(&model, &prepared, &settings)?;
            ensure_parent(&out)?;
            report.write(&out)?;
            print!("{}", report.to_text());
        }
        Command::Ablate {
            data,
            config,
            variants,
            seeds,
            out,
        } => {
            let tc = config.resolve()?;
            let variants = variants
                .iter()
                .map(|v| Variant::from_name(v))
                .collect::<Result<Vec<_>>>()?;
            let prepared = PreparedDataset::load(&data)?;
            let rows = cli::ablate(&tc, &prepared, &variants, &seeds)?;
            ensure_parent(&out)?;
            cli::write_ablation(&out, &rows)?;
            for r in &rows {
                info!(
                    "{}: pearson {:.4} r2 {:.4} train_wmse {:.4} test_wmse {:.4}",
                    r.variant, r.pearson, r.r_squared, r.train_wmse, r.test_wmse
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
