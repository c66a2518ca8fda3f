//! `alstm`: generate scenes, featurize audio, train and compare models.

use alstm_core::harness::{
    compare, evaluate_run, featurize_dir, generate_scenes, run_experiment_with, ExperimentConfig, HarnessError,
    Variant,
};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "alstm", version, about = "Multi-channel attention LSTM frame classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (key=value lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides both the scene and the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides paths.output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides model.variant.
    #[arg(long)]
    variant: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write every scene of the config as WAV plus label CSV.
    Generate(Common),
    /// Featurize a directory of WAV files into AMF1 caches.
    Featurize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Phase bands; 256 keeps every bin.
        #[arg(long, default_value_t = 256)]
        bands: usize,
    },
    /// Train the configured variant and write its run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Suppress per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a trained run's checkpoint on the test split.
    Evaluate(Common),
    /// Tabulate finished runs.
    Compare {
        /// One or more configs; with a single config, --variants expands it.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated variants to compare from each config.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// CSV destination (defaults to <output>/compare.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("unknown variant {0:?}")]
    Variant(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Harness(e) => e.exit_code() as u8,
            _ => 1,
        }
    }
}

fn parse_variant(name: &str) -> Result<Variant, CliError> {
    name.parse().map_err(|_| CliError::Variant(name.to_string()))
}

fn load(
    path: &Path,
    seed: Option<u64>,
    out: Option<&PathBuf>,
    variant: Option<&str>,
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = out {
        cfg.output = out.clone();
    }
    if let Some(v) = variant {
        cfg.model.variant = parse_variant(v)?;
    }
    Ok(cfg)
}

fn load_common(c: &Common) -> Result<ExperimentConfig, CliError> {
    load(&c.config, c.seed, c.out.as_ref(), c.variant.as_deref())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(c) => {
            let cfg = load_common(&c)?;
            let out = c.out.unwrap_or_else(|| cfg.output.join("scenes"));
            let written = generate_scenes(&cfg, &out)?;
            println!("wrote {} scenes to {}", written.len(), out.display());
        }
        Command::Featurize { input, out, bands } => {
            if bands == 0 || bands > alstm_core::features::NUM_BINS {
                return Err(CliError::Io(format!("--bands must be in 1..=256, got {bands}")));
            }
            let written = featurize_dir(&input, &out, bands)?;
            println!("wrote {} feature files to {}", written.len(), out.display());
        }
        Command::Train { common, quiet } => {
            let cfg = load_common(&common)?;
            let variant = cfg.model.variant;
            let summary = run_experiment_with(&cfg, |r| {
                if !quiet {
                    eprintln!(
                        "{variant} epoch {} lr {:.4} train loss {:.4} dev acc {:.4}",
                        r.epoch, r.learning_rate, r.train_loss, r.dev_frame_accuracy
                    );
                }
            })?;
            println!("{}", to_json(&summary));
        }
        Command::Evaluate(c) => {
            let cfg = load_common(&c)?;
            let e = evaluate_run(&cfg)?;
            let report = serde_json::json!({
                "variant": cfg.model.variant.name(),
                "test_frame_accuracy": e.frame_accuracy,
                "test_loss": e.loss,
                "test_frames": e.frames,
                "clean_channel_mass": e.clean_channel_mass,
            });
            println!("{}", to_json(&report));
        }
        Command::Compare {
            configs,
            seed,
            variants,
            out,
        } => {
            let mut runs = Vec::new();
            for path in &configs {
                let cfg = load(path, seed, None, None)?;
                if variants.is_empty() {
                    runs.push(cfg);
                } else {
                    for v in &variants {
                        let mut c = cfg.clone();
                        c.model.variant = parse_variant(v)?;
                        runs.push(c);
                    }
                }
            }
            let table = compare(&runs)?;
            let csv_path = out.unwrap_or_else(|| runs[0].output.join("compare.csv"));
            alstm_core::cache::write_atomic(&csv_path, table.to_csv().as_bytes())
                .map_err(|e| CliError::Io(format!("writing {}: {e}", csv_path.display())))?;
            print!("{}", table.to_text());
            println!("csv: {}", csv_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
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
