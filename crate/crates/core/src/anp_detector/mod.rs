//! Emotional-concept (ANP) detection.
//!
//! The detector is a small backbone producing an embedding per image plus a
//! linear head over ANP classes. It is trained with cross-entropy plus a
//! hierarchical contrastive term that treats images sharing a noun as
//! positives at the coarse level and images sharing the full pair as
//! positives at the fine level; batches come from a sampler that guarantees
//! both kinds of positive for every anchor.

mod loss;
mod model;
mod sampler;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoders::{Embedding, EncoderError};
use crate::labels::Anp;

pub use loss::{
    detector_loss, detector_loss_with, hierarchical_loss, hierarchical_loss_with, supervised_contrastive_loss,
    supervised_contrastive_loss_with, ContrastiveOutput, DetectorLossOutput,
};
pub use model::{predict_topk_anps, rank_concepts, ConceptPrediction, DetectorModel, RankedConcept};
pub use sampler::{flatten_batch, sample_hierarchical_batch, BatchTriple, EpochState, Labeled};
pub use train::{
    train_detector, DetectorCheckpoint, DetectorEpoch, DetectorSample, DetectorTrainConfig, SampleError,
    TrainedDetector, TrainingLog, CHECKPOINT_FORMAT,
};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("batch needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("{what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("sample {index}: {source}")]
    Embedding {
        index: usize,
        #[source]
        source: EncoderError,
    },
    #[error("label {0} is not a detector class")]
    UnknownClass(Anp),
    #[error("sampler batch size must be at least 3, got {0}")]
    SamplerBatchSize(usize),
    #[error("epoch exhausted")]
    EpochExhausted,
    #[error("k = {k} outside [2, {classes}]")]
    BadK { k: usize, classes: usize },
    #[error("invalid loss config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("no training sample can form a hierarchical triple")]
    NoTrainableSamples,
}

/// Which label defines positives in the supervised contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelView {
    Noun,
    Anp,
}

/// How per-anchor contrastive terms are combined. `Sum` follows the outer
/// summation literally; `Mean` divides by the batch size for scale studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// Scalar hyperparameters of the detector and classifier objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda_mix: f64,
    pub anp_threshold: f64,
    pub k_chains: usize,
    pub k_concepts: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.07,
            lambda_mix: 1.0,
            anp_threshold: crate::encoders::DEFAULT_FILTER_THRESHOLD,
            k_chains: 5,
            k_concepts: 3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        let bad = |m: &str| Err(DetectorError::Config(m.to_string()));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad("tau must be a positive finite number");
        }
        if !(self.lambda_mix >= 0.0 && self.lambda_mix.is_finite()) {
            return bad("lambda_mix must be non-negative");
        }
        if !(-1.0..=1.0).contains(&self.anp_threshold) {
            return bad("anp_threshold must lie in [-1, 1]");
        }
        if self.k_chains < 1 {
            return bad("k_chains must be at least 1");
        }
        if self.k_concepts < 2 {
            return bad("k_concepts must be at least 2");
        }
        Ok(())
    }
}

/// Embeddings with their pair labels. Noun labels are derived.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddingBatch {
    embeddings: Vec<Embedding>,
    anps: Vec<Anp>,
}

impl LabeledEmbeddingBatch {
    pub fn new(embeddings: Vec<Embedding>, anps: Vec<Anp>) -> Result<Self, DetectorError> {
        if embeddings.len() != anps.len() {
            return Err(DetectorError::Shape {
                what: "labels per embedding",
                expected: embeddings.len(),
                got: anps.len(),
            });
        }
        if embeddings.len() < 2 {
            return Err(DetectorError::BatchTooSmall(embeddings.len()));
        }
        let dim = embeddings[0].dim();
        if let Some(e) = embeddings.iter().find(|e| e.dim() != dim) {
            return Err(DetectorError::Shape {
                what: "embedding dimension",
                expected: dim,
                got: e.dim(),
            });
        }
        Ok(LabeledEmbeddingBatch { embeddings, anps })
    }

    /// Convenience constructor from raw vectors.
    pub fn from_raw(vectors: Vec<Vec<f64>>, anps: Vec<Anp>) -> Result<Self, DetectorError> {
        let embeddings = vectors
            .into_iter()
            .enumerate()
            .map(|(index, v)| Embedding::new(v).map_err(|source| DetectorError::Embedding { index, source }))
            .collect::<Result<_, _>>()?;
        Self::new(embeddings, anps)
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn embeddings(&self) -> &[Embedding] {
        &self.embeddings
    }

    pub fn anps(&self) -> &[Anp] {
        &self.anps
    }

    pub fn nouns(&self) -> Vec<&str> {
        self.anps.iter().map(Anp::noun).collect()
    }

    /// Group id per sample under `view`; equal ids mean positives.
    pub(crate) fn groups(&self, view: LabelView) -> Vec<usize> {
        let key = |a: &Anp| match view {
            LabelView::Noun => a.noun().to_string(),
            LabelView::Anp => a.to_string(),
        };
        let mut seen: Vec<String> = Vec::new();
        self.anps
            .iter()
            .map(|a| {
                let k = key(a);
                match seen.iter().position(|s| *s == k) {
                    Some(i) => i,
                    None => {
                        seen.push(k);
                        seen.len() - 1
                    }
                }
            })
            .collect()
    }
}
