//! `emocap` command-line front end.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for data errors
//! (files, labels, configs, checkpoints), 3 for client or pipeline stage
//! failures.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use emocap::harness::{HarnessError, Separability};

#[derive(Debug, Parser)]
#[command(
    name = "emocap",
    version,
    about = "Image emotion classification through concepts and captions"
)]
struct Cli {
    /// Pipeline config (TOML, or JSON when the name ends in .json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory; stdout when omitted and the verb prints.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitName {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// JSONL dataset; defaults to `data.dataset` from the config.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Drop records whose image disagrees with its noun.
    Filter {
        #[command(flatten)]
        data: DataArgs,
        /// Defaults to `loss.anp_threshold`.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train the concept detector and write its checkpoint.
    TrainDetector {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Top-k concepts for one image.
    PredictAnps {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Affective caption for one image by self-consistent reasoning chains.
    Caption {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Text-or-visual routing decision for one image.
    Route {
        #[arg(long)]
        image: PathBuf,
    },
    /// Train the fusion classifier and write its checkpoint.
    TrainClassifier {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Class probabilities for one concept and caption.
    Classify {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        anp: String,
        #[arg(long)]
        caption: String,
    },
    /// Run the full pipeline and write one trace per image (JSON Lines).
    Run {
        #[arg(long, conflicts_with = "data")]
        image: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitName,
    },
    /// Evaluate the pipeline on labeled records and write the report.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        /// Also write the per-image traces here (JSON Lines).
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Write classifier features (TSV with a JSON header line).
    ExportFeatures {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitName,
    },
    /// Generate a synthetic corpus with fixtures and a pipeline config.
    Synth {
        #[arg(long, default_value_t = 8)]
        nouns: usize,
        #[arg(long, default_value_t = 2)]
        adjectives: usize,
        #[arg(long, default_value_t = 15)]
        images: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, value_enum, default_value = "high")]
        separability: SeparabilityArg,
        #[arg(long, default_value_t = 0.1)]
        text_fraction: f64,
        #[arg(long, default_value_t = 0.1)]
        noise_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SeparabilityArg {
    High,
    Low,
}

impl From<SeparabilityArg> for Separability {
    fn from(s: SeparabilityArg) -> Self {
        match s {
            SeparabilityArg::High => Separability::High,
            SeparabilityArg::Low => Separability::Low,
        }
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Harness(HarnessError),
}

macro_rules! harness_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Harness(e.into())
            }
        }
    )*};
}

harness_error!(
    HarnessError,
    emocap::anp_detector::DetectorError,
    emocap::anp_detector::SampleError,
    emocap::captioning::CaptionError,
    emocap::checkpoint::CheckpointError,
    emocap::classifier::ClassifierError,
    emocap::dataset::DatasetError,
    emocap::encoders::EncoderError,
    emocap::preprocess::PreprocessError,
    emocap::remote::ClientError,
    emocap::routing::RoutingError,
    emocap::taxonomy::TaxonomyError
);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Harness(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
