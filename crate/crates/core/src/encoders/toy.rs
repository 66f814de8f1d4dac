use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Embedding, EncoderClient};
use crate::dataset::ImageRecord;
use crate::remote::{content_hash, ClientError};

/// Deterministic offline encoder.
///
/// Text: every lowercase alphanumeric token is hashed to a seed, expanded into
/// a pseudo-random vector, and the token vectors are summed. Distinct tokens
/// land on nearly orthogonal directions once `dim` is a few dozen.
///
/// Images: looked up by record id in a declared table.
#[derive(Debug, Clone, Default)]
pub struct ToyEncoder {
    dim: usize,
    images: HashMap<String, Embedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTable {
    pub dim: usize,
    pub images: std::collections::BTreeMap<String, Embedding>,
}

impl ToyEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        ToyEncoder {
            dim,
            images: HashMap::new(),
        }
    }

    pub fn insert_image(&mut self, id: &str, embedding: Embedding) {
        assert_eq!(embedding.dim(), self.dim, "image embedding dimension");
        self.images.insert(id.to_string(), embedding);
    }

    pub fn with_table_file(mut self, path: &Path) -> Result<Self, ClientError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        let table: ToyTable =
            serde_json::from_str(&text).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        if table.dim != self.dim {
            return Err(ClientError::Fixture(format!(
                "{}: table dim {} but encoder dim {}",
                path.display(),
                table.dim,
                self.dim
            )));
        }
        for (id, e) in table.images {
            self.insert_image(&id, e);
        }
        Ok(self)
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let digest = content_hash(&[token.as_bytes()]);
        let seed = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

pub(crate) fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl EncoderClient for ToyEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_image(&self, record: &ImageRecord) -> Result<Embedding, ClientError> {
        self.images
            .get(&record.id)
            .cloned()
            .ok_or_else(|| ClientError::Fixture(format!("no toy image embedding for {:?}", record.id)))
    }

    fn encode_text(&self, text: &str) -> Result<Embedding, ClientError> {
        let mut acc = vec![0.0; self.dim];
        for t in tokens(text) {
            for (a, v) in acc.iter_mut().zip(self.token_vector(&t)) {
                *a += v;
            }
        }
        Embedding::new(acc).map_err(|e| ClientError::Other(e.to_string()))
    }
}
