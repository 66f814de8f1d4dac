//! Embedding vectors, vision/text encoder clients, and the image–concept
//! relevance filter.
//!
//! An image is kept for detector training when its embedding agrees with the
//! embedding of `"A photo of a {noun}"`:
//!
//! ```text
//! S_vt = (F_v · F_t) / (‖F_v‖ ‖F_t‖)      keep iff S_vt >= threshold
//! ```

mod http;
mod toy;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ImageRecord;
use crate::remote::ClientError;

pub use http::HttpEncoder;
pub(crate) use toy::tokens;
pub use toy::{ToyEncoder, ToyTable};

pub const DEFAULT_FILTER_THRESHOLD: f64 = 0.95;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("embedding must be non-empty")]
    EmptyEmbedding,
    #[error("embedding component {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("undefined similarity: zero-norm embedding")]
    ZeroNorm,
    #[error("noun must be non-empty")]
    EmptyNoun,
    #[error("filter threshold {0} outside [-1, 1]")]
    BadThreshold(f64),
    #[error("record {0:?} has no adjective-noun label")]
    MissingAnp(String),
    #[error("record {id:?}: encoder failed: {source}")]
    Client {
        id: String,
        #[source]
        source: ClientError,
    },
    #[error("record {id:?}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<EncoderError>,
    },
}

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EncoderError> {
        if values.is_empty() {
            return Err(EncoderError::EmptyEmbedding);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(EncoderError::NonFinite { index, value });
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = EncoderError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine_similarity(u: &Embedding, v: &Embedding) -> Result<f64, EncoderError> {
    cosine(u.values(), v.values())
}

/// Slice form of [`cosine_similarity`], shared by the loss code.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EncoderError> {
    if u.len() != v.len() {
        return Err(EncoderError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(EncoderError::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn noun_prompt(noun: &str) -> Result<String, EncoderError> {
    let noun = noun.trim();
    if noun.is_empty() {
        return Err(EncoderError::EmptyNoun);
    }
    Ok(format!("A photo of a {noun}"))
}

/// A joint vision-language encoder. Output dimension is fixed per client and
/// identical inputs give identical embeddings.
pub trait EncoderClient: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_image(&self, record: &ImageRecord) -> Result<Embedding, ClientError>;
    fn encode_text(&self, text: &str) -> Result<Embedding, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Toy,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub dim: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Toy only: JSON table of image embeddings keyed by record id.
    #[serde(default)]
    pub table: Option<PathBuf>,
}

impl EncoderConfig {
    pub fn build(&self) -> Result<Box<dyn EncoderClient>, ClientError> {
        match self.kind {
            EncoderKind::Toy => {
                let mut enc = ToyEncoder::new(self.dim);
                if let Some(path) = &self.table {
                    enc = enc.with_table_file(path)?;
                }
                Ok(Box::new(enc))
            }
            EncoderKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| ClientError::Other("remote encoder needs an endpoint".into()))?;
                Ok(Box::new(HttpEncoder::new(endpoint, self.dim, self.cache_dir.clone())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterScore {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub retained: Vec<ImageRecord>,
    pub removed: Vec<ImageRecord>,
    /// One score per input record, in input order.
    pub scores: Vec<FilterScore>,
}

/// Image–concept similarity for one labelled record.
pub fn relevance(record: &ImageRecord, client: &dyn EncoderClient) -> Result<f64, EncoderError> {
    let anp = record
        .anp
        .as_ref()
        .ok_or_else(|| EncoderError::MissingAnp(record.id.clone()))?;
    let client_err = |source| EncoderError::Client {
        id: record.id.clone(),
        source,
    };
    let image = client.encode_image(record).map_err(client_err)?;
    let text = client.encode_text(&noun_prompt(anp.noun())?).map_err(client_err)?;
    cosine_similarity(&image, &text).map_err(|e| EncoderError::Record {
        id: record.id.clone(),
        source: Box::new(e),
    })
}

/// Splits `records` into those whose image agrees with their noun prompt
/// (`S_vt >= threshold`) and those that do not. Both halves keep input order.
pub fn filter_dataset(
    records: &[ImageRecord],
    client: &dyn EncoderClient,
    threshold: f64,
) -> Result<FilterOutcome, EncoderError> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(EncoderError::BadThreshold(threshold));
    }
    if let Some(r) = records.iter().find(|r| r.anp.is_none()) {
        return Err(EncoderError::MissingAnp(r.id.clone()));
    }
    let sims: Vec<f64> = records
        .par_iter()
        .map(|r| relevance(r, client))
        .collect::<Result<_, _>>()?;
    let mut out = FilterOutcome {
        retained: Vec::new(),
        removed: Vec::new(),
        scores: Vec::with_capacity(records.len()),
    };
    for (r, s) in records.iter().zip(sims) {
        out.scores.push(FilterScore {
            id: r.id.clone(),
            similarity: s,
        });
        if s >= threshold {
            out.retained.push(r.clone());
        } else {
            out.removed.push(r.clone());
        }
    }
    Ok(out)
}
