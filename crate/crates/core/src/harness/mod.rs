//! End-to-end orchestration: configuration, the per-image pipeline,
//! evaluation metrics, feature export and synthetic data.

mod config;
mod eval;
mod features;
mod pipeline;
mod synth;

use thiserror::Error;

pub use config::{CaptioningConfig, DataConfig, PipelineConfig};
pub use eval::{evaluate, tally, EvalReport, Failure, Outcome, RouteCounts};
pub use features::{export_features, feature_rows, FeatureHeader, FeatureRow, FEATURE_FORMAT};
pub use pipeline::{classifier_examples, load_split, run_pipeline, Pipeline, Stage, StageError, Trace};
pub use synth::{synth_dataset, Separability, SynthDataset, SynthPaths, SynthSpec};

use crate::anp_detector::{DetectorError, SampleError};
use crate::captioning::CaptionError;
use crate::checkpoint::CheckpointError;
use crate::classifier::ClassifierError;
use crate::dataset::DatasetError;
use crate::encoders::EncoderError;
use crate::preprocess::PreprocessError;
use crate::remote::ClientError;
use crate::routing::RoutingError;
use crate::taxonomy::TaxonomyError;

/// Process exit status for data problems (bad files, labels, configs).
pub const EXIT_DATA: i32 = 2;
/// Process exit status for client or pipeline stage failures.
pub const EXIT_STAGE: i32 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Caption(#[from] CaptionError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("record {0:?} has no ground-truth emotion")]
    MissingLabel(String),
    #[error("record {id:?}: {message}")]
    Record { id: String, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// [`EXIT_STAGE`] for failures of a client or pipeline stage,
    /// [`EXIT_DATA`] for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Client(_)
            | HarnessError::Stage(_)
            | HarnessError::Caption(_)
            | HarnessError::Routing(_)
            | HarnessError::Encoder(EncoderError::Client { .. }) => EXIT_STAGE,
            _ => EXIT_DATA,
        }
    }
}
