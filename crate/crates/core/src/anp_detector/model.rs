use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DetectorError;
use crate::labels::Anp;
use crate::nn::{softmax, Dense, Mlp};
use crate::preprocess::PixelTensor;

/// Small backbone over pooled pixels plus a linear head over pair classes.
///
/// The backbone output is the embedding the contrastive term scores; the
/// head reads it unnormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub grid: usize,
    pub backbone: Mlp,
    pub head: Dense,
    pub classes: Vec<Anp>,
}

impl DetectorModel {
    pub fn init<R: Rng + ?Sized>(
        classes: Vec<Anp>,
        grid: usize,
        hidden_dim: usize,
        embed_dim: usize,
        rng: &mut R,
    ) -> Self {
        let input = grid * grid * crate::preprocess::CHANNELS;
        let backbone = Mlp::init(&[input, hidden_dim, embed_dim], rng);
        let head = Dense::init(embed_dim, classes.len(), rng);
        DetectorModel {
            grid,
            backbone,
            head,
            classes,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.backbone.output_dim()
    }

    /// Backbone input for an image: pooled channel means rescaled to `[-1, 1]`.
    pub fn features(&self, pixels: &PixelTensor) -> Vec<f64> {
        pixels.pooled(self.grid).into_iter().map(|v| 2.0 * v - 1.0).collect()
    }

    pub fn embed(&self, features: &[f64]) -> Vec<f64> {
        self.backbone.forward(features)
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.head.forward(&self.embed(features))
    }

    pub fn probabilities(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.logits(features))
    }

    pub fn param_count(&self) -> usize {
        self.backbone.layers.iter().map(Dense::param_count).sum::<usize>() + self.head.param_count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub anp: Anp,
    pub probability: f64,
}

/// Top-k pairs by probability, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptPrediction {
    pub ranked: Vec<RankedConcept>,
}

impl ConceptPrediction {
    pub fn top(&self) -> &RankedConcept {
        &self.ranked[0]
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// Softmax over `logits`, then the `k` most probable classes. Equal
/// probabilities keep ascending class order.
pub fn rank_concepts(classes: &[Anp], logits: &[f64], k: usize) -> Result<ConceptPrediction, DetectorError> {
    if logits.len() != classes.len() {
        return Err(DetectorError::Shape {
            what: "logits per class",
            expected: classes.len(),
            got: logits.len(),
        });
    }
    if k < 2 || k > classes.len() {
        return Err(DetectorError::BadK {
            k,
            classes: classes.len(),
        });
    }
    let probs = softmax(logits);
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    Ok(ConceptPrediction {
        ranked: order
            .into_iter()
            .take(k)
            .map(|c| RankedConcept {
                anp: classes[c].clone(),
                probability: probs[c],
            })
            .collect(),
    })
}

pub fn predict_topk_anps(
    model: &DetectorModel,
    pixels: &PixelTensor,
    k: usize,
) -> Result<ConceptPrediction, DetectorError> {
    rank_concepts(&model.classes, &model.logits(&model.features(pixels)), k)
}
