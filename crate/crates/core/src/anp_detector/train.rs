use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    detector_loss_with, flatten_batch, sample_hierarchical_batch, DetectorError, DetectorModel, EpochState, Labeled,
    LabeledEmbeddingBatch, LossConfig, Reduction,
};
use crate::checkpoint::{self, CheckpointError};
use crate::dataset::ImageRecord;
use crate::labels::{Anp, LabelHierarchy};
use crate::nn::cross_entropy;
use crate::preprocess::{preprocess_image, PreprocessError};

pub const CHECKPOINT_FORMAT: &str = "emocap-detector";

/// A labeled image reduced to backbone input features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSample {
    pub id: String,
    pub anp: Anp,
    pub features: Vec<f64>,
}

impl Labeled for DetectorSample {
    fn id(&self) -> &str {
        &self.id
    }

    fn anp(&self) -> Option<&Anp> {
        Some(&self.anp)
    }
}

impl DetectorSample {
    /// Preprocesses every record and pools it on a `grid × grid` layout.
    /// Crops (when `augment`) use one seed per record drawn up front, so the
    /// result does not depend on thread scheduling.
    pub fn prepare<R: Rng + ?Sized>(
        records: &[ImageRecord],
        grid: usize,
        augment: bool,
        rng: &mut R,
    ) -> Result<Vec<DetectorSample>, SampleError> {
        let seeds: Vec<u64> = records.iter().map(|_| rng.gen()).collect();
        records
            .par_iter()
            .zip(seeds)
            .map(|(r, seed)| {
                let anp = r.anp.clone().ok_or_else(|| SampleError::MissingAnp(r.id.clone()))?;
                let px = preprocess_image(r, augment, &mut ChaCha8Rng::seed_from_u64(seed))?;
                Ok(DetectorSample {
                    id: r.id.clone(),
                    anp,
                    features: px.pooled(grid).into_iter().map(|v| 2.0 * v - 1.0).collect(),
                })
            })
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("record {0:?} has no ANP label")]
    MissingAnp(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorTrainConfig {
    pub loss: LossConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub grid: usize,
    pub reduction: Reduction,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            loss: LossConfig::default(),
            lr: 0.001,
            batch_size: 64,
            epochs: 30,
            hidden_dim: 32,
            embed_dim: 16,
            grid: 4,
            reduction: Reduction::Sum,
        }
    }
}

impl DetectorTrainConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        self.loss.validate()?;
        let bad = |m: &str| Err(DetectorError::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be non-negative");
        }
        if self.batch_size < 3 {
            return Err(DetectorError::SamplerBatchSize(self.batch_size));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.grid == 0 {
            return bad("hidden_dim, embed_dim and grid must be positive");
        }
        Ok(())
    }
}

/// One row of the training log. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorEpoch {
    pub epoch: usize,
    /// Mean detector loss over the fixed evaluation batches.
    pub loss: f64,
    pub cross_entropy: f64,
    pub contrastive: f64,
    /// Mean loss of the optimizer steps taken during this epoch.
    pub step_loss: Option<f64>,
    pub steps: usize,
    pub validation_ce: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<DetectorEpoch>,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedDetector {
    pub model: DetectorModel,
    pub log: TrainingLog,
    pub best_epoch: usize,
}

/// What goes on disk: the config, the model (which carries its class list)
/// and the log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorCheckpoint {
    pub config: DetectorTrainConfig,
    pub model: DetectorModel,
    pub log: TrainingLog,
}

impl DetectorCheckpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        checkpoint::save(path, CHECKPOINT_FORMAT, self)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        checkpoint::load(path, CHECKPOINT_FORMAT)
    }
}

struct BatchStats {
    loss: f64,
    cross_entropy: f64,
    contrastive: f64,
}

/// Forward pass, loss and (optionally) one SGD step on a flat batch.
fn run_batch(
    model: &mut DetectorModel,
    samples: &[&DetectorSample],
    config: &DetectorTrainConfig,
    step: bool,
) -> Result<BatchStats, DetectorError> {
    let traces: Vec<_> = samples
        .iter()
        .map(|s| model.backbone.forward_traced(&s.features))
        .collect();
    let logits: Vec<Vec<f64>> = traces.iter().map(|t| model.head.forward(&t.output)).collect();
    let batch = LabeledEmbeddingBatch::from_raw(
        traces.iter().map(|t| t.output.clone()).collect(),
        samples.iter().map(|s| s.anp.clone()).collect(),
    )?;
    let out = detector_loss_with(&batch, &logits, &model.classes, config.loss.tau, config.reduction)?;
    if step {
        let mut head_grad = model.head.zero_grad();
        let mut grads = model.backbone.zero_grad();
        for (i, trace) in traces.iter().enumerate() {
            let mut g = model.head.backward(&trace.output, &out.grad_logits[i], &mut head_grad);
            for (a, b) in g.iter_mut().zip(&out.grad_embeddings[i]) {
                *a += b;
            }
            model.backbone.backward(trace, &g, &mut grads);
        }
        model.head.sgd_step(&head_grad, config.lr);
        model.backbone.sgd_step(&grads, config.lr);
    }
    Ok(BatchStats {
        loss: out.loss,
        cross_entropy: out.cross_entropy,
        contrastive: out.contrastive,
    })
}

/// One epoch's worth of flat batches, as id lists.
fn draw_epoch<R: Rng + ?Sized>(
    samples: &[DetectorSample],
    hierarchy: &LabelHierarchy,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<String>>, DetectorError> {
    let mut state = EpochState::new();
    let mut batches = Vec::new();
    loop {
        match sample_hierarchical_batch(samples, hierarchy, batch_size, rng, &mut state) {
            Ok(triples) => batches.push(flatten_batch(&triples)),
            Err(DetectorError::EpochExhausted) => return Ok(batches),
            Err(e) => return Err(e),
        }
    }
}

fn validation_ce(model: &DetectorModel, validation: &[DetectorSample]) -> Result<Option<f64>, DetectorError> {
    if validation.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for s in validation {
        let target = model
            .classes
            .iter()
            .position(|c| *c == s.anp)
            .ok_or_else(|| DetectorError::UnknownClass(s.anp.clone()))?;
        total += cross_entropy(&model.logits(&s.features), target).0;
    }
    Ok(Some(total / validation.len() as f64))
}

/// Trains with plain SGD over hierarchically sampled batches.
///
/// A fixed set of evaluation batches is drawn once up front and scored before
/// training and after every epoch; those scores form the log. The returned
/// model is the epoch with the lowest validation cross-entropy (or the lowest
/// evaluation loss when `validation` is empty).
pub fn train_detector<R: Rng + ?Sized>(
    train: &[DetectorSample],
    validation: &[DetectorSample],
    hierarchy: &LabelHierarchy,
    config: &DetectorTrainConfig,
    rng: &mut R,
) -> Result<TrainedDetector, DetectorError> {
    config.validate()?;
    let input_dim = config.grid * config.grid * crate::preprocess::CHANNELS;
    if let Some(s) = train.iter().chain(validation).find(|s| s.features.len() != input_dim) {
        return Err(DetectorError::Shape {
            what: "feature length",
            expected: input_dim,
            got: s.features.len(),
        });
    }
    let mut model = DetectorModel::init(
        hierarchy.flatten(),
        config.grid,
        config.hidden_dim,
        config.embed_dim,
        rng,
    );
    let index: HashMap<&str, usize> = train.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let lookup = |ids: &[String]| ids.iter().map(|id| &train[index[id.as_str()]]).collect::<Vec<_>>();

    let mut eval_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let eval_batches = draw_epoch(train, hierarchy, config.batch_size, &mut eval_rng)?;
    if eval_batches.is_empty() {
        return Err(DetectorError::NoTrainableSamples);
    }

    let evaluate = |model: &mut DetectorModel, epoch: usize, step_loss: Option<f64>, steps: usize| {
        let (mut l, mut ce, mut con) = (0.0, 0.0, 0.0);
        for ids in &eval_batches {
            let s = run_batch(model, &lookup(ids), config, false)?;
            l += s.loss;
            ce += s.cross_entropy;
            con += s.contrastive;
        }
        let n = eval_batches.len() as f64;
        Ok::<_, DetectorError>(DetectorEpoch {
            epoch,
            loss: l / n,
            cross_entropy: ce / n,
            contrastive: con / n,
            step_loss,
            steps,
            validation_ce: validation_ce(model, validation)?,
        })
    };

    let score = |e: &DetectorEpoch| e.validation_ce.unwrap_or(e.loss);
    let mut log = TrainingLog::default();
    log.epochs.push(evaluate(&mut model, 0, None, 0)?);
    let mut best = (score(&log.epochs[0]), 0, model.clone());

    for epoch in 1..=config.epochs {
        let batches = draw_epoch(train, hierarchy, config.batch_size, rng)?;
        let mut total = 0.0;
        for (b, ids) in batches.iter().enumerate() {
            let s = match run_batch(&mut model, &lookup(ids), config, true) {
                // Non-finite or collapsed embeddings mean the parameters blew up.
                Err(DetectorError::Embedding { .. }) => {
                    return Err(DetectorError::Diverged {
                        epoch,
                        batch: b,
                        loss: f64::NAN,
                    })
                }
                r => r?,
            };
            if !s.loss.is_finite() {
                return Err(DetectorError::Diverged {
                    epoch,
                    batch: b,
                    loss: s.loss,
                });
            }
            total += s.loss;
        }
        let row = match evaluate(
            &mut model,
            epoch,
            Some(total / batches.len().max(1) as f64),
            batches.len(),
        ) {
            Ok(row) if row.loss.is_finite() => row,
            Ok(row) => {
                return Err(DetectorError::Diverged {
                    epoch,
                    batch: batches.len(),
                    loss: row.loss,
                })
            }
            Err(DetectorError::Embedding { .. }) => {
                return Err(DetectorError::Diverged {
                    epoch,
                    batch: batches.len(),
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        if score(&row) < best.0 {
            best = (score(&row), epoch, model.clone());
        }
        log.epochs.push(row);
    }

    Ok(TrainedDetector {
        model: best.2,
        log,
        best_epoch: best.1,
    })
}
