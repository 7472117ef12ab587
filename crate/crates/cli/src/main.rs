//! `stable-align`: synthesize datasets, fine-tune the stabilizer, evaluate and sweep.
//!
//! Data goes to stdout, diagnostics to stderr. Exit codes: 0 on success,
//! 2 on invalid input or configuration, 3 on numerical failure.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use stable_align::convlstm::checkpoint;
use stable_align::harness::dataset_io::{load_split, save_dataset, Split};
use stable_align::harness::{
    evaluate, export_loss_surface, finetune, generate_dataset, initial_model, robustness_sweep, sweep_theta,
    sweep_theta_pdc, write_csv, DecoderKind, ExperimentConfig, LossKind, RobustnessLevels, DEFAULT_THETA_GRID,
    DEFAULT_THETA_PDC_GRID,
};
use stable_align::metrics::MetricsReport;

#[derive(Debug, Parser)]
#[command(name = "stable-align", version, about = "Temporally stable heatmap landmark detection on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the train and test splits and write them with a manifest.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fine-tune the stabilizer on the train split of a dataset directory.
    ///
    /// Writes the checkpoint to --out and the per-epoch loss history next to it
    /// (`<out>.history.csv`). Prints the final epoch loss.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `synth`.
        #[arg(short, long)]
        data: PathBuf,
        /// Checkpoint path (.clm).
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score a checkpoint, or the raw backbone, on the test split.
    ///
    /// Prints the metrics report as JSON. With --out, also writes
    /// `metrics.json` and `metrics.csv` into that directory.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by `synth`.
        #[arg(short, long)]
        data: PathBuf,
        /// Checkpoint to evaluate.
        #[arg(short, long, required_unless_present = "baseline", conflicts_with = "baseline")]
        model: Option<PathBuf>,
        /// Evaluate the backbone heatmaps without the stabilizer.
        #[arg(long)]
        baseline: bool,
        /// Directory for metrics.json and metrics.csv.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep and emit one CSV row per grid point.
    ///
    /// theta: theta,nrmse,mcv,mav,nrmse_x_mcv (default grid 0,0.5,1,1.5,2).
    /// theta-pdc: theta_pdc,nrmse,mcv,mav,nrmse_x_mav (default grid 0,0.1,0.2,0.4,0.6).
    /// robustness: noise_sigma,blur_sigma,method,nrmse,mcv,mav (noise 0,0.05,0.1,0.2 x blur 0,1,2).
    /// surface: e_t,e_prev,pixel_term,modulated_term,total on a 64x64 grid over [-1,1]^2.
    #[command(verbatim_doc_comment)]
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
        #[command(flatten)]
        common: Common,
        /// Comma-separated grid overriding the default (theta and theta-pdc only).
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        /// Output CSV; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepKind {
    Theta,
    #[value(name = "theta-pdc", alias = "theta_pdc")]
    ThetaPdc,
    Robustness,
    Surface,
}

/// Overrides applied on top of the config file. Unset flags keep the file's
/// value, or the built-in default when the file has none.
#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON; unknown keys are rejected).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Fine-tuning objective [default: jitter].
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    /// Heatmap decoder: argmax, interp or pdc [default: pdc].
    #[arg(long, value_parser = parse_decoder)]
    decoder: Option<DecoderKind>,
    /// Clamp of the jitter modulation term [default: 1].
    #[arg(long)]
    theta: Option<f64>,
    /// Relative threshold of the centroid decoder [default: 0.2].
    #[arg(long = "theta-pdc")]
    theta_pdc: Option<f64>,
    /// Weight of the plain pixel term in the jitter loss [default: 1].
    #[arg(long)]
    lambda: Option<f64>,
    /// Stabilizer of the motion normalization [default: 0.01].
    #[arg(long)]
    xi: Option<f64>,
    /// Adam learning rate [default: 0.0001].
    #[arg(long)]
    lr: Option<f64>,
    /// Fine-tuning epochs [default: 30].
    #[arg(long)]
    epochs: Option<usize>,
    /// Experiment seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: stable_align::Error| e.to_string())
}

fn parse_decoder(s: &str) -> std::result::Result<DecoderKind, String> {
    s.parse().map_err(|e: stable_align::Error| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.loss {
            config.loss.kind = v;
        }
        if let Some(v) = self.decoder {
            config.decoder.kind = v;
        }
        if let Some(v) = self.theta {
            config.loss.theta = v;
        }
        if let Some(v) = self.theta_pdc {
            config.decoder.theta_pdc = v;
        }
        if let Some(v) = self.lambda {
            config.loss.lambda = v;
        }
        if let Some(v) = self.xi {
            config.loss.xi = v;
        }
        if let Some(v) = self.lr {
            config.optimizer.lr = v;
        }
        if let Some(v) = self.epochs {
            config.optimizer.epochs = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        config.validate()?;
        Ok(config)
    }
}

fn history_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".history.csv");
    PathBuf::from(name)
}

fn write_rows<T: serde::Serialize>(out: Option<&Path>, rows: &[T]) -> Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(BufWriter::new(file), rows)?;
        }
        None => write_csv(io::stdout().lock(), rows)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let config = common.resolve()?;
            let dataset = generate_dataset(&config)?;
            let manifest = save_dataset(&out, &dataset).with_context(|| format!("writing dataset to {}", out.display()))?;
            eprintln!("wrote {} sequences to {}", manifest.sequences.len(), out.display());
        }
        Command::Finetune { common, data, out } => {
            let config = common.resolve()?;
            let train = load_split(&data, Split::Train).with_context(|| format!("loading {}", data.display()))?;
            let outcome = finetune(initial_model(&config)?, &train, &config)?;
            checkpoint::save(&out, &outcome.model).with_context(|| format!("writing {}", out.display()))?;
            let history = history_path(&out);
            let file = File::create(&history).with_context(|| format!("creating {}", history.display()))?;
            write_csv(BufWriter::new(file), &outcome.history)?;
            match outcome.history.last() {
                Some(last) => println!("{}", last.loss),
                None => eprintln!("no epochs run; checkpoint is the initial model"),
            }
        }
        Command::Eval {
            common,
            data,
            model,
            baseline: _,
            out,
        } => {
            let config = common.resolve()?;
            let test = load_split(&data, Split::Test).with_context(|| format!("loading {}", data.display()))?;
            let model = match &model {
                Some(path) => Some(checkpoint::load(path).with_context(|| format!("loading model {}", path.display()))?),
                None => None,
            };
            let report = evaluate(model.as_ref(), &test, &config)?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                fs::write(dir.join("metrics.json"), format!("{json}\n"))?;
                fs::write(
                    dir.join("metrics.csv"),
                    format!("{}\n{}\n", MetricsReport::CSV_HEADER, report.to_csv_row()),
                )?;
            }
            println!("{json}");
        }
        Command::Sweep {
            kind,
            common,
            values,
            out,
        } => {
            let config = common.resolve()?;
            let out = out.as_deref();
            match kind {
                SweepKind::Theta => {
                    let grid = values.unwrap_or_else(|| DEFAULT_THETA_GRID.to_vec());
                    write_rows(out, &sweep_theta(&grid, &config)?)?;
                }
                SweepKind::ThetaPdc => {
                    let grid = values.unwrap_or_else(|| DEFAULT_THETA_PDC_GRID.to_vec());
                    write_rows(out, &sweep_theta_pdc(&grid, &config)?)?;
                }
                SweepKind::Robustness => {
                    if values.is_some() {
                        anyhow::bail!(stable_align::Error::InvalidConfig {
                            key: "values".into(),
                            message: "the robustness sweep uses fixed noise and blur levels".into(),
                        });
                    }
                    write_rows(out, &robustness_sweep(&RobustnessLevels::default(), &config)?)?;
                }
                SweepKind::Surface => write_rows(out, &export_loss_surface(&config, 64)?)?,
            }
        }
    }
    io::stdout().flush()?;
    Ok(())
}

/// 3 for numerical failures, 2 for everything else (bad input, config, files).
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<stable_align::Error>(),
            Some(
                stable_align::Error::NumericalFailure { .. }
                    | stable_align::Error::NonFinite { .. }
                    | stable_align::Error::Degenerate(_)
            )
        )
    });
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
