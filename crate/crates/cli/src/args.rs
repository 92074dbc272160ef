use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use uqsup_core::metrics::Objective;
use uqsup_core::quantifiers::Quantifier;
use uqsup_core::supervisor::BenignDefinition;
use uqsup_core::tensor_io::{Distribution, Split};

/// Uncertainty-based supervision of DNN prediction samples.
///
/// Set UQSUP_THREADS to cap the worker threads. Exit status: 0 on success,
/// 2 on invalid input or arguments, 1 on internal failure.
#[derive(Debug, Parser)]
#[command(name = "uqsup", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic classifier dump (tensor, labels, manifest).
    Synth(SynthArgs),
    /// Compute per-input predictions and uncertainties.
    Quantify(QuantifyArgs),
    /// Calibrate a supervisor threshold on nominal validation data.
    Calibrate(CalibrateArgs),
    /// Accept or reject every input of a dump with a calibrated threshold.
    Supervise(SuperviseArgs),
    /// Calibrate, supervise and score every (quantifier, epsilon, dump) cell.
    Evaluate(EvaluateArgs),
    /// Average ranks of competitors across groups of an evaluation table.
    Rank(RankArgs),
    /// Supervised objective as a function of the number of samples used.
    SampleSize(SampleSizeArgs),
    /// Windowed mean/std maps over a hyperparameter grid and their correlation.
    Sensitivity(SensitivityArgs),
    /// Mean AVGPR per dropout rate and quantifier.
    DropoutSummary(DropoutSummaryArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct TensorOptions {
    /// Divide every softmax row by its sum instead of rejecting drifted rows.
    #[arg(long)]
    pub renormalize: bool,
    /// Use only the first K samples of each input.
    #[arg(long, value_name = "K")]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrationOptions {
    /// Pick the realized FPR closest to epsilon instead of the lowest one >= epsilon.
    #[arg(long)]
    pub closest: bool,
    /// Validation inputs that count as benign when computing the FPR.
    #[arg(long, default_value = "correct-only", value_parser = parse_benign)]
    pub benign_definition: BenignDefinition,
    /// Regression only: absolute errors above this bound count as malicious.
    #[arg(long)]
    pub imprecision: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub inputs: usize,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Per-sample logit perturbation scale.
    #[arg(long, default_value_t = 0.7)]
    pub noise_scale: f64,
    /// Probability that a high-noise input gets a label the model never predicts.
    #[arg(long, default_value_t = 0.8)]
    pub mislabel_link: f64,
    #[arg(long, default_value = "synthetic")]
    pub dataset_tag: String,
    #[arg(long, default_value = "synthetic")]
    pub technique_tag: String,
    #[arg(long, default_value = "nominal", value_parser = parse_distribution)]
    pub distribution: Distribution,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: Split,
    #[arg(long)]
    pub epoch: Option<u32>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    /// Tensor path, e.g. run.uqt; run.labels.csv and run.manifest.json are written beside it.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantifyArgs {
    pub tensor: PathBuf,
    /// Comma-separated quantifier codes, e.g. vr,pe,mi,ms.
    #[arg(long, short, value_delimiter = ',', required = true, value_parser = parse_quantifier)]
    pub quantifier: Vec<Quantifier>,
    #[command(flatten)]
    pub tensor_options: TensorOptions,
    /// Predicted-variance tensor for MEAN-VAR (default: STEM.variances.uqt).
    #[arg(long)]
    pub variances: Option<PathBuf>,
    /// One STEM.<quantifier>.csv per quantifier is written here.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Nominal validation tensor.
    pub tensor: PathBuf,
    /// Labels CSV (default: STEM.labels.csv).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, short, value_parser = parse_quantifier)]
    pub quantifier: Quantifier,
    /// Target false positive rate on benign validation inputs.
    #[arg(long, short)]
    pub epsilon: f64,
    #[command(flatten)]
    pub tensor_options: TensorOptions,
    #[command(flatten)]
    pub calibration: CalibrationOptions,
    /// Threshold JSON output.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SuperviseArgs {
    pub tensor: PathBuf,
    /// Threshold JSON written by `calibrate`.
    #[arg(long)]
    pub threshold: PathBuf,
    #[command(flatten)]
    pub tensor_options: TensorOptions,
    /// Decisions CSV: index,predicted,uncertainty,accepted.
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Nominal validation tensor used for calibration.
    #[arg(long)]
    pub validation: PathBuf,
    /// Validation labels (default: STEM.labels.csv).
    #[arg(long)]
    pub validation_labels: Option<PathBuf>,
    /// Test tensors to score; labels are read from STEM.labels.csv and
    /// metadata from STEM.manifest.json next to each.
    #[arg(long, required = true, num_args = 1..)]
    pub test: Vec<PathBuf>,
    #[arg(long, short, value_delimiter = ',', required = true, value_parser = parse_quantifier)]
    pub quantifier: Vec<Quantifier>,
    #[arg(long, short, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
    pub epsilon: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub beta: Vec<f64>,
    #[arg(long, default_value = "accuracy", value_parser = parse_objective)]
    pub objective: Objective,
    /// Objective normalization bounds LOWER,UPPER. Accuracy defaults to 0,1;
    /// MSE defaults to the 1st/99th percentile of validation errors.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub bounds: Option<Vec<f64>>,
    #[command(flatten)]
    pub tensor_options: TensorOptions,
    #[command(flatten)]
    pub calibration: CalibrationOptions,
    /// Full reports as JSON.
    #[arg(long)]
    pub out_json: PathBuf,
    /// One flat row per (dump, quantifier, epsilon).
    #[arg(long)]
    pub out_csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct TableInput {
    /// CSV tables with a header row (e.g. `evaluate` output); rows are concatenated.
    #[arg(required = true)]
    pub input: Vec<PathBuf>,
    /// Keep only rows where COLUMN equals VALUE; repeatable.
    #[arg(long = "where", value_name = "COLUMN=VALUE", value_parser = parse_filter)]
    pub filters: Vec<(String, String)>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub table: TableInput,
    /// Columns that together identify a group.
    #[arg(long, value_delimiter = ',', default_value = "subject,distribution,epsilon")]
    pub group_by: Vec<String>,
    /// Columns that together identify a competitor.
    #[arg(long, value_delimiter = ',', default_value = "technique,quantifier")]
    pub competitor: Vec<String>,
    /// Column ranked within each group, highest first.
    #[arg(long, default_value = "s1")]
    pub metric: String,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleSizeArgs {
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub validation_labels: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long, short, value_parser = parse_quantifier)]
    pub quantifier: Quantifier,
    #[arg(long, short)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    /// Defaults to the number of samples in the dumps.
    #[arg(long)]
    pub k_max: Option<usize>,
    #[arg(long)]
    pub renormalize: bool,
    #[command(flatten)]
    pub calibration: CalibrationOptions,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Plot-ready x,y,value,series CSV.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub table: TableInput,
    #[arg(long, default_value = "epoch")]
    pub row: String,
    #[arg(long, default_value = "samples")]
    pub col: String,
    #[arg(long, default_value = "supervised")]
    pub value: String,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    /// Writes mean.csv, std.csv, summary.json and plot.csv here.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DropoutSummaryArgs {
    #[command(flatten)]
    pub table: TableInput,
    #[arg(long, default_value = "dropout_rate")]
    pub rate: String,
    #[arg(long, default_value = "avgpr")]
    pub metric: String,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

fn parse_quantifier(s: &str) -> Result<Quantifier, String> {
    s.parse().map_err(|e: uqsup_core::Error| e.to_string())
}

fn parse_benign(s: &str) -> Result<BenignDefinition, String> {
    s.parse()
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    s.parse()
}

fn parse_distribution(s: &str) -> Result<Distribution, String> {
    match s {
        "nominal" => Ok(Distribution::Nominal),
        "ood" => Ok(Distribution::Ood),
        other => Err(format!("unknown distribution `{other}` (nominal, ood)")),
    }
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}` (validation, test)")),
    }
}

fn parse_filter(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected COLUMN=VALUE, got `{s}`"))
}
