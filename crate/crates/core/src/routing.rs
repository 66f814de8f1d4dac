//! Text-or-visual routing.
//!
//! Images carrying enough legible text skip the visual pipeline: the text is
//! read by OCR and its emotion is asked of the chat model directly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::captioning::{ChatClient, ChatRequest};
use crate::dataset::ImageRecord;
use crate::preprocess::{decode, PreprocessError};
use crate::remote::{content_hash, CachedCall, ClientError, DiskCache};
use crate::taxonomy::EmotionTaxonomy;

#[derive(Debug, Error)]
pub enum RoutingError {
    #[error(transparent)]
    Decode(#[from] PreprocessError),
    #[error("ocr for record {id:?}: {source}")]
    Ocr {
        id: String,
        #[source]
        source: ClientError,
    },
    #[error("chat: {0}")]
    Chat(#[source] ClientError),
    #[error("no text to classify")]
    EmptyText,
    #[error("unparseable emotion reply: {reply:?}")]
    UnparseableReply { reply: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrRegion {
    pub text: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrResult {
    pub text: String,
    pub mean_confidence: f64,
    pub region_count: usize,
}

impl OcrResult {
    pub fn empty() -> Self {
        OcrResult {
            text: String::new(),
            mean_confidence: 0.0,
            region_count: 0,
        }
    }

    /// Joins regions in reading order. Regions without text are dropped.
    pub fn from_regions(regions: &[OcrRegion]) -> Self {
        let kept: Vec<&OcrRegion> = regions.iter().filter(|r| !r.text.trim().is_empty()).collect();
        if kept.is_empty() {
            return OcrResult::empty();
        }
        OcrResult {
            text: kept.iter().map(|r| r.text.trim()).collect::<Vec<_>>().join(" "),
            mean_confidence: kept.iter().map(|r| r.confidence).sum::<f64>() / kept.len() as f64,
            region_count: kept.len(),
        }
    }
}

/// Text recognizer returning regions in reading order.
pub trait OcrClient: Send + Sync {
    fn recognize(&self, image: &ImageRecord) -> Result<Vec<OcrRegion>, ClientError>;
}

/// Scripted regions keyed by image id; unknown ids have no text.
#[derive(Debug, Clone, Default)]
pub struct MockOcr {
    regions: BTreeMap<String, Vec<OcrRegion>>,
}

impl MockOcr {
    pub fn new(regions: BTreeMap<String, Vec<OcrRegion>>) -> Self {
        MockOcr { regions }
    }

    pub fn from_file(path: &Path) -> Result<Self, ClientError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map(MockOcr::new)
            .map_err(|e| ClientError::Fixture(format!("{}: {e}", path.display())))
    }
}

impl OcrClient for MockOcr {
    fn recognize(&self, image: &ImageRecord) -> Result<Vec<OcrRegion>, ClientError> {
        Ok(self.regions.get(&image.id).cloned().unwrap_or_default())
    }
}

/// OCR behind HTTP. Request `{"image_base64"}`, response `{"regions":
/// [{"text", "confidence"}]}`, cached by image bytes.
#[derive(Debug, Clone)]
pub struct RemoteOcr {
    call: CachedCall,
}

#[derive(Serialize, Deserialize)]
struct OcrResponse {
    regions: Vec<OcrRegion>,
}

impl RemoteOcr {
    pub fn new(endpoint: String, cache_dir: Option<PathBuf>) -> Self {
        RemoteOcr {
            call: CachedCall {
                endpoint,
                cache: cache_dir.map(DiskCache::new),
                credential_env: Some("EMOCAP_OCR_TOKEN".into()),
            },
        }
    }
}

impl OcrClient for RemoteOcr {
    fn recognize(&self, image: &ImageRecord) -> Result<Vec<OcrRegion>, ClientError> {
        let bytes = image
            .source
            .read_bytes()
            .map_err(|e| ClientError::Other(format!("record {:?}: {e}", image.id)))?;
        let key = content_hash(&[b"ocr", &bytes]);
        let body = serde_json::json!({
            "image_base64": base64::engine::general_purpose::STANDARD.encode(&bytes)
        });
        let r: OcrResponse = self.call.call(&key, &body)?;
        Ok(r.regions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcrKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcrConfig {
    pub kind: OcrKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Mock only: JSON object mapping image id to regions.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
}

impl OcrConfig {
    pub fn build(&self) -> Result<Box<dyn OcrClient>, ClientError> {
        match self.kind {
            OcrKind::Mock => Ok(Box::new(match &self.fixtures {
                Some(p) => MockOcr::from_file(p)?,
                None => MockOcr::default(),
            })),
            OcrKind::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| ClientError::Other("remote OCR needs an endpoint".into()))?;
                Ok(Box::new(RemoteOcr::new(endpoint, self.cache_dir.clone())))
            }
        }
    }
}

/// Decodes the image (so corrupt inputs fail here, not in the recognizer)
/// and summarizes the recognized regions.
pub fn detect_embedded_text(image: &ImageRecord, ocr: &dyn OcrClient) -> Result<OcrResult, RoutingError> {
    decode(image)?;
    let regions = ocr.recognize(image).map_err(|source| RoutingError::Ocr {
        id: image.id.clone(),
        source,
    })?;
    Ok(OcrResult::from_regions(&regions))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    TextPath,
    VisualPath,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub route: Route,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    pub min_chars: usize,
    pub min_confidence: f64,
    /// Send images whose emotion reply cannot be parsed down the visual path
    /// instead of failing.
    pub fallback_to_visual: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            min_chars: 8,
            min_confidence: 0.8,
            fallback_to_visual: false,
        }
    }
}

/// Text path iff there is text, it has at least `min_chars` non-whitespace
/// characters, and the mean confidence reaches `min_confidence`.
pub fn decide_route(ocr: &OcrResult, min_chars: usize, min_confidence: f64) -> RouteDecision {
    let chars = ocr.text.chars().filter(|c| !c.is_whitespace()).count();
    let (route, reason) = if chars == 0 {
        (Route::VisualPath, "no text found".to_string())
    } else if chars < min_chars {
        (Route::VisualPath, format!("{chars} text characters, need {min_chars}"))
    } else if ocr.mean_confidence < min_confidence {
        (
            Route::VisualPath,
            format!("text confidence {:.3} below {min_confidence}", ocr.mean_confidence),
        )
    } else {
        (
            Route::TextPath,
            format!("{chars} text characters at confidence {:.3}", ocr.mean_confidence),
        )
    };
    RouteDecision { route, reason }
}

pub fn zero_shot_prompt(text: &str, taxonomy: &EmotionTaxonomy) -> String {
    format!(
        "The following text was found in an image.\n\
         Text: \"{}\"\n\
         Which emotion does this text convey? Choose exactly one of: {}.\n\
         Answer with the emotion name only.",
        text.trim(),
        taxonomy.classes().join(", ")
    )
}

/// Asks the chat model for the emotion of `text` and maps the reply to a
/// class index. The reply must name a class exactly, ignoring case and
/// surrounding whitespace.
pub fn zero_shot_text_emotion(
    client: &dyn ChatClient,
    text: &str,
    taxonomy: &EmotionTaxonomy,
) -> Result<usize, RoutingError> {
    if text.trim().is_empty() {
        return Err(RoutingError::EmptyText);
    }
    let prompt = zero_shot_prompt(text, taxonomy);
    let reply = client
        .generate(&ChatRequest {
            prompt: &prompt,
            image: None,
            sample_index: 0,
        })
        .map_err(RoutingError::Chat)?;
    taxonomy
        .index_of(&reply)
        .ok_or(RoutingError::UnparseableReply { reply })
}
