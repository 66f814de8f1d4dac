use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FusionTemplate;
use crate::encoders::tokens;
use crate::nn::{Dense, DenseGrad};
use crate::remote::content_hash;

/// Maps a fusion template to its `[CLS]` vector.
pub trait FusionEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, template: &FusionTemplate) -> Vec<f64>;
}

/// Hashed bag-of-words encoder.
///
/// Tokens of each segment are hashed into a trainable embedding table and
/// averaged; the pair average and caption average are concatenated and
/// passed through one `tanh` layer, whose output serves as the `[CLS]`
/// vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagEncoder {
    pub buckets: usize,
    pub token_dim: usize,
    /// Row-major `buckets × token_dim`.
    pub table: Vec<f64>,
    pub proj: Dense,
}

/// Bucket ids of a template's two segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedTemplate {
    pub anp: Vec<usize>,
    pub caption: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BagTrace {
    ids: EncodedTemplate,
    pooled: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BagGrad {
    table: Vec<f64>,
    proj: DenseGrad,
}

impl BagEncoder {
    pub fn init<R: Rng + ?Sized>(buckets: usize, token_dim: usize, dim: usize, rng: &mut R) -> Self {
        BagEncoder {
            buckets,
            token_dim,
            table: (0..buckets * token_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            proj: Dense::init(2 * token_dim, dim, rng),
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let digest = content_hash(&[b"tok", token.as_bytes()]);
        (u64::from_str_radix(&digest[..16], 16).expect("hex digest") % self.buckets as u64) as usize
    }

    pub fn encode_ids(&self, template: &FusionTemplate) -> EncodedTemplate {
        let ids = |seg: &[String]| {
            seg.iter()
                .flat_map(|t| tokens(t).collect::<Vec<_>>())
                .map(|t| self.bucket(&t))
                .collect()
        };
        EncodedTemplate {
            anp: ids(template.anp_segment()),
            caption: ids(template.caption_segment()),
        }
    }

    fn row(&self, id: usize) -> &[f64] {
        &self.table[id * self.token_dim..(id + 1) * self.token_dim]
    }

    pub fn forward_ids(&self, ids: &EncodedTemplate) -> BagTrace {
        let d = self.token_dim;
        let mut pooled = vec![0.0; 2 * d];
        for (half, seg) in [&ids.anp, &ids.caption].into_iter().enumerate() {
            for &id in seg {
                for (p, v) in pooled[half * d..(half + 1) * d].iter_mut().zip(self.row(id)) {
                    *p += v / seg.len() as f64;
                }
            }
        }
        let h = self.proj.forward(&pooled).into_iter().map(f64::tanh).collect();
        BagTrace {
            ids: ids.clone(),
            pooled,
            h,
        }
    }

    pub fn zero_grad(&self) -> BagGrad {
        BagGrad {
            table: vec![0.0; self.table.len()],
            proj: self.proj.zero_grad(),
        }
    }

    pub fn backward(&self, trace: &BagTrace, grad_h: &[f64], grad: &mut BagGrad) {
        let pre: Vec<f64> = grad_h.iter().zip(&trace.h).map(|(g, h)| g * (1.0 - h * h)).collect();
        let g_pooled = self.proj.backward(&trace.pooled, &pre, &mut grad.proj);
        let d = self.token_dim;
        for (half, seg) in [&trace.ids.anp, &trace.ids.caption].into_iter().enumerate() {
            for &id in seg {
                let row = &mut grad.table[id * d..(id + 1) * d];
                for (r, g) in row.iter_mut().zip(&g_pooled[half * d..(half + 1) * d]) {
                    *r += g / seg.len() as f64;
                }
            }
        }
    }

    pub fn sgd_step(&mut self, grad: &BagGrad, lr: f64) {
        for (w, g) in self.table.iter_mut().zip(&grad.table) {
            *w -= lr * g;
        }
        self.proj.sgd_step(&grad.proj, lr);
    }
}

impl FusionEncoder for BagEncoder {
    fn dim(&self) -> usize {
        self.proj.outputs
    }

    fn embed(&self, template: &FusionTemplate) -> Vec<f64> {
        self.forward_ids(&self.encode_ids(template)).h
    }
}
