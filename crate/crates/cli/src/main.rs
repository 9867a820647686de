//! `vlseg`: dataset synthesis, triplet building, training, inference,
//! one-shot adaptation, evaluation and reporting from one binary.

mod commands;
mod config;
mod reference;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vlseg::Error;

#[derive(Parser, Debug)]
#[command(name = "vlseg", version, about = "Language-driven segmentation pipeline")]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Global seed; replaces every section seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthetic data generation.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Color region description.
    #[command(subcommand)]
    Crd(CrdCmd),
    /// Train a model on a triplet file.
    Train(TrainArgs),
    /// Segment one image from a text prompt.
    Infer(InferArgs),
    /// One-shot adaptation to an unseen class.
    #[command(subcommand)]
    Adapt(AdaptCmd),
    /// Score a checkpoint on one split of a triplet file.
    Eval(EvalArgs),
    /// Aggregate per-sample records or a task table into a report.
    Report(ReportArgs),
    /// Write mean-pooled encoder features of every image to CSV.
    ExportFeatures(ExportArgs),
    /// Print the default configuration or the flag and schema reference.
    #[command(subcommand)]
    Config(ConfigCmd),
}

#[derive(Subcommand, Debug)]
pub enum DatasetCmd {
    /// Render toy scans, split them by scan and write a manifest.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub scans: Option<usize>,
    /// Comma-separated shape classes.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long)]
    pub slices_per_scan: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Train,tune,validation fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub ratios: Option<Vec<f64>>,
}

#[derive(Subcommand, Debug)]
pub enum CrdCmd {
    /// Describe every manifest pair and write triplets as JSON lines.
    Build(CrdArgs),
}

#[derive(Args, Debug)]
pub struct CrdArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Describe through a remote vision-language endpoint.
    #[arg(long, value_name = "URL")]
    pub vlm_endpoint: Option<String>,
    #[arg(long)]
    pub vlm_timeout: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    /// Directory for the checkpoint, vocabulary and loss curve.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Train low-rank adapters instead of the full language model.
    #[arg(long)]
    pub lora: bool,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Grayscale PNG.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long = "class")]
    pub class_name: String,
    #[arg(long)]
    pub modality: String,
    /// 8-bit PNG for the binary mask (0 or 255).
    #[arg(long)]
    pub out_mask: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum AdaptCmd {
    /// Store the features and location prior of one annotated exemplar.
    Register(RegisterArgs),
    /// Segment an image with a registered memory.
    Segment(AdaptSegmentArgs),
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub image: PathBuf,
    /// Label PNG of the exemplar.
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long = "class")]
    pub class_name: String,
    /// Mask label holding the class; required when the mask has several.
    #[arg(long)]
    pub label: Option<u16>,
    #[arg(long, default_value = "unspecified")]
    pub modality: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AdaptSegmentArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub memory: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub modality: String,
    #[arg(long)]
    pub out_mask: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    /// train, tune or validation.
    #[arg(long)]
    pub split: Option<String>,
    /// Output directory for records.csv, report.csv and report.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip the filled-box reference rows.
    #[arg(long)]
    pub no_baselines: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Table CSV with task,method,dsc columns.
    #[arg(long, conflicts_with = "records", required_unless_present = "records")]
    pub table: Option<PathBuf>,
    /// Per-sample records written by `eval`.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Also write the report as CSV.
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub triplets: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum ConfigCmd {
    /// Print the default configuration as JSON.
    Default,
    /// Write the Markdown flag and schema reference.
    Reference {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_MISSING: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_NUMERIC: u8 = 5;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Stage { source, .. } => exit_code(source),
        Error::MissingFile(_) => EXIT_MISSING,
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::NonFinite(_) | Error::Tensor(_) => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
