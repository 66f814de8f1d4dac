use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_contrastive_pack, build_template, info_nce, total_loss, ClassifierError, ClassifierExample, ClassifierModel,
    EncodedTemplate, SamplingMode,
};
use crate::anp_detector::LossConfig;
use crate::checkpoint::{self, CheckpointError};
use crate::nn::{argmax, cross_entropy};
use crate::taxonomy::EmotionTaxonomy;

pub const CHECKPOINT_FORMAT: &str = "emocap-classifier";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub loss: LossConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Negatives per pack; all other-class batch members when unset.
    pub n_negatives: Option<usize>,
    pub sampling: SamplingMode,
    /// When false the contrastive term is never computed (plain
    /// cross-entropy training).
    pub contrastive: bool,
    pub buckets: usize,
    pub token_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            loss: LossConfig::default(),
            lr: 0.001,
            batch_size: 64,
            epochs: 50,
            n_negatives: None,
            sampling: SamplingMode::ImageLevel,
            contrastive: true,
            buckets: 4096,
            token_dim: 32,
            hidden_dim: 32,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        self.loss
            .validate()
            .map_err(|e| ClassifierError::Config(e.to_string()))?;
        let bad = |m: &str| Err(ClassifierError::Config(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be non-negative");
        }
        if self.batch_size == 0 || self.buckets == 0 || self.token_dim == 0 || self.hidden_dim == 0 {
            return bad("batch_size, buckets, token_dim and hidden_dim must be positive");
        }
        if self.n_negatives == Some(0) {
            return bad("n_negatives must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    /// Mean total loss over the epoch's batches.
    pub loss: f64,
    pub cross_entropy: f64,
    /// Mean contrastive loss; `None` when the term is disabled.
    pub contrastive: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub validation_ce: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierLog {
    pub epochs: Vec<ClassifierEpoch>,
}

impl ClassifierLog {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub model: ClassifierModel,
    pub log: ClassifierLog,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierCheckpoint {
    pub config: ClassifierTrainConfig,
    pub model: ClassifierModel,
    pub log: ClassifierLog,
}

impl ClassifierCheckpoint {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        checkpoint::save(path, CHECKPOINT_FORMAT, self)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        checkpoint::load(path, CHECKPOINT_FORMAT)
    }
}

fn check_examples(examples: &[ClassifierExample], classes: usize) -> Result<(), ClassifierError> {
    for e in examples {
        if e.concepts.len() < 2 {
            return Err(ClassifierError::TooFewConcepts(e.id.clone()));
        }
        if e.emotion >= classes {
            return Err(ClassifierError::BadLabel {
                id: e.id.clone(),
                emotion: e.emotion,
                classes,
            });
        }
        build_template(&e.concepts[0], &e.caption).map_err(|source| ClassifierError::Record {
            id: e.id.clone(),
            source: Box::new(source),
        })?;
    }
    Ok(())
}

/// Accuracy and mean cross-entropy of `model` on `examples`, reading each
/// example's top concept.
pub(crate) fn score(model: &ClassifierModel, examples: &[ClassifierExample]) -> Option<(f64, f64)> {
    if examples.is_empty() {
        return None;
    }
    let (mut correct, mut ce) = (0usize, 0.0);
    for e in examples {
        let ids = model
            .encoder
            .encode_ids(&build_template(&e.concepts[0], &e.caption).expect("examples were checked"));
        let logits = model.head.forward(&model.encoder.forward_ids(&ids).h);
        correct += usize::from(argmax(&logits) == e.emotion);
        ce += cross_entropy(&logits, e.emotion).0;
    }
    let n = examples.len() as f64;
    Some((correct as f64 / n, ce / n))
}

/// SGD on `ce + λ·con` per batch, where `ce` is the mean cross-entropy on
/// anchor templates and `con` the mean pack loss over batch members that have
/// an other-class partner in the batch. Negatives are drawn from the batch.
///
/// Shuffling and pack sampling use separate random streams, so runs that
/// differ only in the contrastive settings visit batches in the same order.
/// Returns the epoch with the best validation accuracy (training accuracy if
/// `validation` is empty); ties keep the earlier epoch.
pub fn train_classifier<R: Rng + ?Sized>(
    train: &[ClassifierExample],
    validation: &[ClassifierExample],
    taxonomy: &EmotionTaxonomy,
    config: &ClassifierTrainConfig,
    rng: &mut R,
) -> Result<TrainedClassifier, ClassifierError> {
    config.validate()?;
    check_examples(train, taxonomy.len())?;
    check_examples(validation, taxonomy.len())?;
    let mut present: Vec<usize> = train.iter().map(|e| e.emotion).collect();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(ClassifierError::TooFewClasses);
    }

    let mut model = ClassifierModel::init(
        taxonomy.classes().to_vec(),
        config.buckets,
        config.token_dim,
        config.hidden_dim,
        rng,
    );
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let mut pack_rng = ChaCha8Rng::seed_from_u64(rng.gen());

    let encoded: Vec<(EncodedTemplate, EncodedTemplate)> = train
        .iter()
        .map(|e| {
            let a = build_template(&e.concepts[0], &e.caption).expect("checked");
            let p = build_template(&e.concepts[1], &e.caption).expect("checked");
            (model.encoder.encode_ids(&a), model.encoder.encode_ids(&p))
        })
        .collect();
    let position: HashMap<&str, usize> = train.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    let lambda = config.loss.lambda_mix;
    let tau = config.loss.tau;

    let mut log = ClassifierLog::default();
    let mut best: Option<(f64, usize, ClassifierModel)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum_loss, mut sum_ce, mut sum_con, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let n = chunk.len();
            let slot: HashMap<usize, usize> = chunk.iter().enumerate().map(|(s, &i)| (i, s)).collect();
            let anchors: Vec<_> = chunk
                .iter()
                .map(|&i| model.encoder.forward_ids(&encoded[i].0))
                .collect();
            let mut grad_h: Vec<Vec<f64>> = vec![vec![0.0; config.hidden_dim]; n];
            let mut head_grad = model.head.zero_grad();
            let mut ce = 0.0;
            for (s, &i) in chunk.iter().enumerate() {
                let (l, mut g) = cross_entropy(&model.head.forward(&anchors[s].h), train[i].emotion);
                ce += l / n as f64;
                g.iter_mut().for_each(|v| *v /= n as f64);
                grad_h[s] = model.head.backward(&anchors[s].h, &g, &mut head_grad);
            }

            let mut enc_grad = model.encoder.zero_grad();
            let mut con = None;
            if config.contrastive {
                let members: Vec<&ClassifierExample> = chunk.iter().map(|&i| &train[i]).collect();
                let mut packs = Vec::new();
                for &i in chunk {
                    match build_contrastive_pack(
                        &train[i],
                        &members,
                        config.n_negatives,
                        config.sampling,
                        &mut pack_rng,
                    ) {
                        Ok(p) => packs.push((i, p)),
                        Err(ClassifierError::NoNegatives) => {}
                        Err(e) => return Err(e),
                    }
                }
                let mut total = 0.0;
                let weight = lambda / packs.len().max(1) as f64;
                for (i, pack) in &packs {
                    // The positive is either this image's second concept or
                    // another image's anchor template.
                    let pos_ids = if pack.positive.source == train[*i].id {
                        &encoded[*i].1
                    } else {
                        &encoded[position[pack.positive.source.as_str()]].0
                    };
                    let pos = model.encoder.forward_ids(pos_ids);
                    let neg_slots: Vec<usize> = pack
                        .negatives
                        .iter()
                        .map(|e| slot[&position[e.source.as_str()]])
                        .collect();
                    let negs: Vec<Vec<f64>> = neg_slots.iter().map(|&s| anchors[s].h.clone()).collect();
                    let s = slot[i];
                    let out = info_nce(&anchors[s].h, &pos.h, &negs, tau)?;
                    total += out.loss;
                    for (a, g) in grad_h[s].iter_mut().zip(&out.grad_anchor) {
                        *a += weight * g;
                    }
                    for (&ns, gn) in neg_slots.iter().zip(&out.grad_negatives) {
                        for (a, g) in grad_h[ns].iter_mut().zip(gn) {
                            *a += weight * g;
                        }
                    }
                    let gp: Vec<f64> = out.grad_positive.iter().map(|g| weight * g).collect();
                    model.encoder.backward(&pos, &gp, &mut enc_grad);
                }
                con = Some(if packs.is_empty() {
                    0.0
                } else {
                    total / packs.len() as f64
                });
            }

            let loss = total_loss(ce, con.unwrap_or(0.0), if config.contrastive { lambda } else { 0.0 });
            if !loss.is_finite() {
                return Err(ClassifierError::Diverged { epoch, batch: b, loss });
            }
            for (trace, g) in anchors.iter().zip(&grad_h) {
                model.encoder.backward(trace, g, &mut enc_grad);
            }
            model.head.sgd_step(&head_grad, config.lr);
            model.encoder.sgd_step(&enc_grad, config.lr);
            sum_loss += loss;
            sum_ce += ce;
            sum_con += con.unwrap_or(0.0);
            batches += 1;
        }

        let nb = batches.max(1) as f64;
        let val = score(&model, validation);
        let row = ClassifierEpoch {
            epoch,
            loss: sum_loss / nb,
            cross_entropy: sum_ce / nb,
            contrastive: config.contrastive.then_some(sum_con / nb),
            validation_accuracy: val.map(|v| v.0),
            validation_ce: val.map(|v| v.1),
        };
        let acc = match val {
            Some((a, _)) => a,
            None => score(&model, train).map_or(0.0, |v| v.0),
        };
        if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
            best = Some((acc, epoch, model.clone()));
        }
        log.epochs.push(row);
    }

    let (_, best_epoch, best_model) = best.unwrap_or((0.0, 0, model));
    Ok(TrainedClassifier {
        model: best_model,
        log,
        best_epoch,
    })
}
