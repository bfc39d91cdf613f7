//! Experiment command line: training, toy fits, lambda sweeps, evaluation,
//! sampling and standalone metric utilities, all driven by a single JSON
//! config. On failure a machine-readable error record is written to stderr
//! and the process exits nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;

use csrae::config::ExperimentConfig;
use csrae::data::load_csv_labeled;
use csrae::error::{Error, Result};
use csrae::eval::{classification_error, frechet_distance, knn_classify, FeatureStats};
use csrae::run;

#[derive(Parser)]
#[command(name = "csrae", version, about = "Cauchy-Schwarz regularized autoencoder experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the experiment JSON config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's random seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, logging per-epoch metrics and keeping the best checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for metrics.jsonl and best.ckpt.
        #[arg(long)]
        out: PathBuf,
        /// Warm-start parameters from an existing checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit the bimodal 1D toy target by MC-KL and closed-form CS.
    FitToy {
        /// Output directory for the trajectory CSVs.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model per lambda and record the RE/CS trade-off.
    SweepLambda {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated lambda values, e.g. 0.5,5,20.
        #[arg(long = "lambda-list", value_delimiter = ',', required = true)]
        lambda_list: Vec<f64>,
        /// Output directory for sweep.csv and per-lambda run directories.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split and print metrics JSON.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Decode prior samples and write the decoder means as CSV.
    Sample {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of samples to draw.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Restrict sampling to one prior component.
        #[arg(long)]
        component: Option<usize>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Squared Frechet distance between Gaussians fitted to two feature CSVs.
    ///
    /// Operates on caller-supplied features; the result is not comparable to
    /// published FID numbers, which use Inception-network features.
    Frechet {
        features_a: PathBuf,
        features_b: PathBuf,
        /// Skip a header row in both files.
        #[arg(long)]
        has_header: bool,
    },
    /// k-nearest-neighbour classification of query rows against labelled
    /// training rows; reports the error rate when the query file carries the
    /// same label column.
    Knn {
        /// Training CSV; one column holds integer labels.
        #[arg(long)]
        train: PathBuf,
        /// Query CSV; either features only or the same layout as --train.
        #[arg(long)]
        query: PathBuf,
        /// Comma-separated neighbour counts.
        #[arg(long, value_delimiter = ',', default_values_t = vec![3, 5, 10])]
        k: Vec<usize>,
        /// Zero-based label column in the training file (default: last).
        #[arg(long = "label-col")]
        label_col: Option<usize>,
        /// Skip a header row in both files.
        #[arg(long)]
        has_header: bool,
    },
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::InvalidMixture(_) => "invalid_mixture",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::ShapeMismatch(_) => "shape_mismatch",
        Error::Numerical(_) => "numerical",
        Error::Data(_) => "data",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn load_features(path: &Path, has_header: bool) -> Result<Array2<f64>> {
    Ok(load_csv_labeled(path, &[], has_header)?.features)
}

fn write_csv(path: &Path, data: &Array2<f64>, width: usize) -> Result<()> {
    let header: Vec<String> = (0..width).map(|j| format!("x{j}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for row in data.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Train {
            config,
            out,
            checkpoint,
        } => {
            let cfg = config.load()?;
            let outcome = run::cmd_train(&cfg, &out, checkpoint.as_deref())?;
            Ok(serde_json::json!({
                "best_score": outcome.best_score,
                "best_epoch": outcome.best_epoch,
                "epochs_run": outcome.epochs_run,
                "metrics_path": outcome.metrics_path,
                "checkpoint_path": outcome.checkpoint_path,
            }))
        }
        Command::FitToy { out, seed } => {
            let summary = run::cmd_fit_toy(&out, seed)?;
            Ok(serde_json::to_value(&summary)?)
        }
        Command::SweepLambda {
            config,
            lambda_list,
            out,
        } => {
            let cfg = config.load()?;
            let rows = run::cmd_sweep_lambda(&cfg, &lambda_list, &out)?;
            Ok(serde_json::to_value(&rows)?)
        }
        Command::Eval { config, checkpoint } => {
            let cfg = config.load()?;
            let report = run::cmd_eval(&cfg, &checkpoint)?;
            Ok(serde_json::to_value(&report)?)
        }
        Command::Sample {
            config,
            checkpoint,
            n,
            component,
            out,
        } => {
            let cfg = config.load()?;
            let samples = run::cmd_sample(&cfg, &checkpoint, n, component)?;
            write_csv(&out, &samples, samples.ncols())?;
            Ok(serde_json::json!({ "written": out, "rows": samples.nrows() }))
        }
        Command::Frechet {
            features_a,
            features_b,
            has_header,
        } => {
            let a = FeatureStats::fit(&load_features(&features_a, has_header)?)?;
            let b = FeatureStats::fit(&load_features(&features_b, has_header)?)?;
            Ok(serde_json::json!({ "frechet_distance": frechet_distance(&a, &b)? }))
        }
        Command::Knn {
            train,
            query,
            k,
            label_col,
            has_header,
        } => {
            let probe = load_features(&train, has_header)?;
            let width = probe.ncols();
            if width < 2 {
                return Err(Error::arg("training file needs features and a label column"));
            }
            let label_col = label_col.unwrap_or(width - 1);
            let train_set = load_csv_labeled(&train, &[label_col], has_header)?;
            let train_labels: Vec<i64> = train_set
                .labels
                .as_ref()
                .expect("label column requested")
                .column(0)
                .to_vec();
            let query_raw = load_features(&query, has_header)?;
            let (query_feats, truth): (Array2<f64>, Option<Vec<i64>>) =
                if query_raw.ncols() == width {
                    let q = load_csv_labeled(&query, &[label_col], has_header)?;
                    let t = q.labels.as_ref().map(|l| l.column(0).to_vec());
                    (q.features, t)
                } else if query_raw.ncols() == width - 1 {
                    (query_raw, None)
                } else {
                    return Err(Error::arg(format!(
                        "query has {} columns; expected {} (with labels) or {}",
                        query_raw.ncols(),
                        width,
                        width - 1
                    )));
                };
            let mut results = Vec::new();
            for &kk in &k {
                let pred = knn_classify(&train_set.features, &train_labels, &query_feats, kk)?;
                let error = truth
                    .as_ref()
                    .map(|t| classification_error(&pred, t))
                    .transpose()?;
                results.push(serde_json::json!({
                    "k": kk,
                    "predictions": pred,
                    "error": error,
                }));
            }
            Ok(serde_json::Value::Array(results))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).unwrap());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = serde_json::json!({
                "error": { "kind": error_kind(&e), "message": e.to_string() }
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
