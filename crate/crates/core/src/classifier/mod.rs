//! Emotion classification from a concept and a caption.
//!
//! The top concept and the affective caption are joined into a
//! `[CLS] <pair> [SEP] <caption>` template, encoded, and classified by a
//! softmax head on the `[CLS]` vector. Training adds a contrastive term that
//! pulls together two concepts of the same image (under the same caption)
//! and pushes away concepts of images from other classes.

mod encoder;
mod loss;
mod model;
mod pack;
mod template;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anp_detector::ConceptPrediction;
use crate::dataset::ImageRecord;
use crate::labels::Anp;

pub use encoder::{BagEncoder, BagGrad, BagTrace, EncodedTemplate, FusionEncoder};
pub use loss::{info_nce, semantic_contrastive_loss, total_loss, InfoNceOutput};
pub use model::{classify, classify_with, ClassifierModel};
pub use pack::{build_contrastive_pack, ContrastivePack, PackEntry, SamplingMode};
pub use template::{build_template, FusionTemplate, CLS, SEP};
pub use train::{
    train_classifier, ClassifierCheckpoint, ClassifierEpoch, ClassifierLog, ClassifierTrainConfig, TrainedClassifier,
    CHECKPOINT_FORMAT,
};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("caption is empty")]
    EmptyCaption,
    #[error("caption contains reserved token {0:?}")]
    ReservedToken(String),
    #[error("no negatives available")]
    NoNegatives,
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("zero or non-finite embedding in contrastive pack")]
    DegenerateEmbedding,
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("classifier head has {head} outputs but the taxonomy has {taxonomy} classes")]
    HeadMismatch { head: usize, taxonomy: usize },
    #[error("record {0:?} needs at least two ranked concepts")]
    TooFewConcepts(String),
    #[error("record {id:?} has no {field}")]
    MissingField { id: String, field: &'static str },
    #[error("record {id:?}: emotion {emotion} outside {classes} classes")]
    BadLabel { id: String, emotion: usize, classes: usize },
    #[error("record {id:?}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<ClassifierError>,
    },
    #[error("training needs at least two emotion classes")]
    TooFewClasses,
    #[error("invalid classifier config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
}

/// One training or evaluation item: ranked concepts, caption, emotion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierExample {
    pub id: String,
    /// Highest-probability concept first.
    pub concepts: Vec<Anp>,
    pub caption: String,
    pub emotion: usize,
}

impl ClassifierExample {
    pub fn from_prediction(id: &str, prediction: &ConceptPrediction, caption: &str, emotion: usize) -> Self {
        ClassifierExample {
            id: id.to_string(),
            concepts: prediction.ranked.iter().map(|r| r.anp.clone()).collect(),
            caption: caption.to_string(),
            emotion,
        }
    }

    /// Reads `concepts`, `caption` and `emotion` off a dataset record.
    pub fn from_record(record: &ImageRecord) -> Result<Self, ClassifierError> {
        let missing = |field| ClassifierError::MissingField {
            id: record.id.clone(),
            field,
        };
        Ok(ClassifierExample {
            id: record.id.clone(),
            concepts: record.concepts.clone().ok_or_else(|| missing("concepts"))?,
            caption: record.caption.clone().ok_or_else(|| missing("caption"))?,
            emotion: record.emotion.ok_or_else(|| missing("emotion"))?,
        })
    }
}
