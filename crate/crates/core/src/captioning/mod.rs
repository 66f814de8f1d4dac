//! Affective captions through structured reasoning chains.
//!
//! A chat model is asked, in three numbered steps, to list four emotional
//! attributes of an image (scene, objects, facial expressions, human
//! actions), relate them, and finish with one short affective caption. `K`
//! chains are sampled and the caption most of them agree on wins.

mod client;
mod consistency;
mod parse;
mod prompt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::remote::ClientError;

pub use client::{ChatClient, ChatConfig, ChatKind, ChatRequest, MockChat, MockChatFixtures, RemoteChat};
pub use consistency::{
    aggregate_self_consistency, aggregate_with_encoder, caption_image, exact_match, normalize_caption,
    CaptionSimilarity, DEFAULT_MERGE_THRESHOLD,
};
pub use parse::{parse_reasoning_chain, NONE_OBSERVED};
pub use prompt::{build_eacot_prompt, ATTRIBUTE_NAMES};

/// Longest caption accepted, in words.
pub const MAX_CAPTION_WORDS: usize = 60;

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("malformed response in section {section:?}: {message}")]
    Parse { section: &'static str, message: String },
    #[error("reasoning chains failed at indices {indices:?}: {}", .messages.join("; "))]
    Chains { indices: Vec<usize>, messages: Vec<String> },
    #[error("k must be at least 1")]
    BadK,
    #[error("no chains to aggregate")]
    NoChains,
    #[error("merge threshold must lie in [0, 1], got {0}")]
    BadThreshold(f64),
    #[error("caption similarity: {0}")]
    Similarity(String),
}

impl CaptionError {
    fn parse(section: &'static str, message: impl Into<String>) -> Self {
        CaptionError::Parse {
            section,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionalAttributes {
    pub scene: String,
    pub objects: Vec<String>,
    pub facial_expressions: Vec<String>,
    pub human_actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub attributes: EmotionalAttributes,
    pub object_relations: String,
    pub object_scene_interaction: String,
    pub caption: String,
}

/// The voted caption and the chains that support it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectiveCaption {
    pub text: String,
    pub source_chain_indices: Vec<usize>,
}

impl AffectiveCaption {
    pub fn votes(&self) -> usize {
        self.source_chain_indices.len()
    }
}

/// Runs `k` chat samples for one prompt and parses each. Samples may run in
/// parallel but the result keeps sample order. Any failure fails the whole
/// call, naming every failed index.
pub fn generate_chains(
    client: &dyn ChatClient,
    prompt: &str,
    image: Option<&crate::dataset::ImageRecord>,
    k: usize,
) -> Result<Vec<ReasoningChain>, CaptionError> {
    use rayon::prelude::*;
    if k == 0 {
        return Err(CaptionError::BadK);
    }
    let results: Vec<Result<ReasoningChain, String>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let req = ChatRequest {
                prompt,
                image,
                sample_index: i,
            };
            let raw = client.generate(&req).map_err(|e: ClientError| e.to_string())?;
            parse_reasoning_chain(&raw).map_err(|e| e.to_string())
        })
        .collect();
    let (mut indices, mut messages) = (Vec::new(), Vec::new());
    let mut chains = Vec::with_capacity(k);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => chains.push(c),
            Err(m) => {
                indices.push(i);
                messages.push(format!("chain {i}: {m}"));
            }
        }
    }
    if indices.is_empty() {
        Ok(chains)
    } else {
        Err(CaptionError::Chains { indices, messages })
    }
}
