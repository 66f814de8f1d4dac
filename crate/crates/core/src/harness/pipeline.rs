use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CaptioningConfig, HarnessError, PipelineConfig};
use crate::anp_detector::{predict_topk_anps, DetectorCheckpoint, DetectorModel, RankedConcept};
use crate::captioning::{caption_image, AffectiveCaption, ChatClient};
use crate::classifier::{classify, ClassifierCheckpoint, ClassifierExample, ClassifierModel};
use crate::dataset::{split_dataset, DatasetSplit, ImageRecord};
use crate::encoders::EncoderClient;
use crate::nn::argmax;
use crate::preprocess::preprocess_image;
use crate::routing::{
    decide_route, detect_embedded_text, zero_shot_text_emotion, OcrClient, OcrResult, Route, RoutingConfig,
    RoutingError,
};
use crate::taxonomy::EmotionTaxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ocr,
    TextEmotion,
    Preprocess,
    AnpDetector,
    Captioning,
    Classifier,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Ocr => "ocr",
            Stage::TextEmotion => "text_emotion",
            Stage::Preprocess => "preprocess",
            Stage::AnpDetector => "anp_detector",
            Stage::Captioning => "captioning",
            Stage::Classifier => "classifier",
        })
    }
}

/// A pipeline failure on one record.
#[derive(Debug, Error)]
#[error("record {id:?} failed at stage {stage}: {source}")]
pub struct StageError {
    pub id: String,
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl StageError {
    fn new<E: std::error::Error + Send + Sync + 'static>(id: &str, stage: Stage, source: E) -> Self {
        StageError {
            id: id.to_string(),
            stage,
            source: Box::new(source),
        }
    }
}

/// What happened to one image on its way through the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub id: String,
    /// The path actually taken.
    pub route: Route,
    pub route_reason: String,
    pub ocr: OcrResult,
    /// Set when a text-path image fell back to the visual path.
    pub fallback: Option<String>,
    /// Ranked concepts, best first; empty on the text path.
    pub concepts: Vec<RankedConcept>,
    pub caption: Option<AffectiveCaption>,
    /// Classifier output; absent on the text path.
    pub probabilities: Option<Vec<f64>>,
    pub predicted: usize,
    pub predicted_class: String,
}

/// Loaded models and clients.
pub struct Pipeline {
    pub taxonomy: EmotionTaxonomy,
    pub detector: DetectorModel,
    pub classifier: ClassifierModel,
    pub chat: Box<dyn ChatClient>,
    pub ocr: Box<dyn OcrClient>,
    /// Needed only for embedding caption similarity.
    pub encoder: Option<Box<dyn EncoderClient>>,
    pub routing: RoutingConfig,
    pub captioning: CaptioningConfig,
    pub k_chains: usize,
    pub k_concepts: usize,
}

impl Pipeline {
    /// Loads both checkpoints and builds every configured client.
    pub fn from_config(config: &PipelineConfig) -> Result<Self, HarnessError> {
        let need = |p: &Option<std::path::PathBuf>, what: &str| {
            p.clone().ok_or_else(|| HarnessError::Config {
                path: "<pipeline>".into(),
                message: format!("{what} is not set"),
            })
        };
        let detector = DetectorCheckpoint::load(&need(&config.detector_checkpoint, "detector_checkpoint")?)?.model;
        let classifier =
            ClassifierCheckpoint::load(&need(&config.classifier_checkpoint, "classifier_checkpoint")?)?.model;
        let encoder = config.encoder.as_ref().map(|e| e.build()).transpose()?;
        Pipeline::new(
            config.taxonomy()?,
            detector,
            classifier,
            config.chat.build()?,
            config.ocr.build()?,
            encoder,
            config,
        )
    }

    pub fn new(
        taxonomy: EmotionTaxonomy,
        detector: DetectorModel,
        classifier: ClassifierModel,
        chat: Box<dyn ChatClient>,
        ocr: Box<dyn OcrClient>,
        encoder: Option<Box<dyn EncoderClient>>,
        config: &PipelineConfig,
    ) -> Result<Self, HarnessError> {
        if classifier.classes.len() != taxonomy.len() {
            return Err(HarnessError::Config {
                path: "<pipeline>".into(),
                message: format!(
                    "classifier has {} classes but taxonomy {:?} has {}",
                    classifier.classes.len(),
                    taxonomy.name(),
                    taxonomy.len()
                ),
            });
        }
        Ok(Pipeline {
            taxonomy,
            detector,
            classifier,
            chat,
            ocr,
            encoder,
            routing: config.routing.clone(),
            captioning: config.captioning.clone(),
            k_chains: config.loss.k_chains,
            k_concepts: config.loss.k_concepts,
        })
    }
}

/// OCR, route, then either read the text's emotion or run detector,
/// captioning and classifier. The visual path classifies the rank-1 concept.
pub fn run_pipeline(image: &ImageRecord, pipeline: &Pipeline) -> Result<(usize, Trace), StageError> {
    let id = image.id.as_str();
    let ocr = detect_embedded_text(image, pipeline.ocr.as_ref()).map_err(|e| match e {
        RoutingError::Decode(d) => StageError::new(id, Stage::Preprocess, d),
        other => StageError::new(id, Stage::Ocr, other),
    })?;
    let decision = decide_route(&ocr, pipeline.routing.min_chars, pipeline.routing.min_confidence);
    let name = |c: usize| pipeline.taxonomy.class_name(c).unwrap_or_default().to_string();
    let mut fallback = None;
    if decision.route == Route::TextPath {
        match zero_shot_text_emotion(pipeline.chat.as_ref(), &ocr.text, &pipeline.taxonomy) {
            Ok(c) => {
                let trace = Trace {
                    id: id.to_string(),
                    route: Route::TextPath,
                    route_reason: decision.reason,
                    ocr,
                    fallback: None,
                    concepts: Vec::new(),
                    caption: None,
                    probabilities: None,
                    predicted: c,
                    predicted_class: name(c),
                };
                return Ok((c, trace));
            }
            Err(e @ RoutingError::UnparseableReply { .. }) if pipeline.routing.fallback_to_visual => {
                fallback = Some(e.to_string());
            }
            Err(e) => return Err(StageError::new(id, Stage::TextEmotion, e)),
        }
    }

    // Inference never augments, so the crop rng is unused.
    let pixels = preprocess_image(image, false, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| StageError::new(id, Stage::Preprocess, e))?;
    let prediction = predict_topk_anps(&pipeline.detector, &pixels, pipeline.k_concepts)
        .map_err(|e| StageError::new(id, Stage::AnpDetector, e))?;
    let (caption, _) = caption_image(
        pipeline.chat.as_ref(),
        image,
        &pipeline.taxonomy,
        pipeline.k_chains,
        pipeline.captioning.similarity,
        pipeline.captioning.merge_threshold,
        pipeline.encoder.as_deref(),
    )
    .map_err(|e| StageError::new(id, Stage::Captioning, e))?;
    let probabilities = classify(
        &pipeline.classifier,
        &prediction.top().anp,
        &caption.text,
        &pipeline.taxonomy,
    )
    .map_err(|e| StageError::new(id, Stage::Classifier, e))?;
    let c = argmax(&probabilities);
    let trace = Trace {
        id: id.to_string(),
        route: Route::VisualPath,
        route_reason: decision.reason,
        ocr,
        fallback,
        concepts: prediction.ranked,
        caption: Some(caption),
        probabilities: Some(probabilities),
        predicted: c,
        predicted_class: name(c),
    };
    Ok((c, trace))
}

/// The configured split file, or a seeded split with the configured ratios.
pub fn load_split(records: &[ImageRecord], config: &PipelineConfig) -> Result<DatasetSplit, HarnessError> {
    Ok(match &config.data.split {
        Some(p) => DatasetSplit::read(p)?,
        None => split_dataset(records, config.data.ratios(), config.seed)?,
    })
}

/// Classifier examples for `records`. With `text_filter`, images the router
/// would send down the text path are left out; their ids are returned
/// second.
pub fn classifier_examples(
    records: &[ImageRecord],
    text_filter: Option<(&dyn OcrClient, &RoutingConfig)>,
) -> Result<(Vec<ClassifierExample>, Vec<String>), HarnessError> {
    let routes: Vec<Route> = match text_filter {
        None => vec![Route::VisualPath; records.len()],
        Some((ocr, routing)) => records
            .par_iter()
            .map(|r| {
                let found = detect_embedded_text(r, ocr).map_err(|e| StageError::new(&r.id, Stage::Ocr, e))?;
                Ok(decide_route(&found, routing.min_chars, routing.min_confidence).route)
            })
            .collect::<Result<_, StageError>>()?,
    };
    let (mut examples, mut excluded) = (Vec::new(), Vec::new());
    for (r, route) in records.iter().zip(routes) {
        if route == Route::TextPath {
            excluded.push(r.id.clone());
        } else {
            examples.push(ClassifierExample::from_record(r)?);
        }
    }
    Ok((examples, excluded))
}
