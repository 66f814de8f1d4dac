//! Deterministic toy corpora with planted structure.
//!
//! Images are small grids of flat cells: the top half is a colour pattern
//! owned by the noun, the bottom half a pattern owned by the pair. Every pair
//! maps to one emotion class, and captions carry class-specific mood words.
//! Alongside the records come fixtures for the offline clients: toy image
//! embeddings (so the relevance filter has something to remove), scripted
//! reasoning chains whose majority caption is the record's caption, and OCR
//! regions plus text replies for images that carry text.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, PipelineConfig};
use crate::captioning::MockChatFixtures;
use crate::dataset::{split_dataset, write_jsonl, DatasetSplit, ImageRecord, PixelSource, SplitRatios};
use crate::encoders::{noun_prompt, Embedding, EncoderClient, EncoderConfig, EncoderKind, ToyEncoder, ToyTable};
use crate::labels::{build_hierarchy, Anp, LabelHierarchy};
use crate::preprocess::encode_png;
use crate::routing::OcrRegion;
use crate::taxonomy::EmotionTaxonomy;

const NOUNS: [&str; 12] = [
    "dog", "cat", "beach", "city", "forest", "car", "flower", "sky", "house", "river", "mountain", "crowd",
];
const ADJECTIVES: [&str; 16] = [
    "cute",
    "angry",
    "sunny",
    "dark",
    "happy",
    "lonely",
    "bright",
    "stormy",
    "quiet",
    "broken",
    "smiling",
    "scary",
    "peaceful",
    "crazy",
    "beautiful",
    "sad",
];
const MOODS: [[&str; 3]; 8] = [
    ["playful", "funny", "giggling"],
    ["furious", "hostile", "raging"],
    ["majestic", "vast", "towering"],
    ["calm", "cozy", "serene"],
    ["filthy", "rotten", "grimy"],
    ["thrilling", "lively", "electric"],
    ["menacing", "eerie", "threatening"],
    ["gloomy", "mournful", "forlorn"],
];
const NEUTRAL: [&str; 6] = ["ordinary", "plain", "typical", "simple", "common", "usual"];
const GRID: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Separability {
    /// Strong cell contrast, light pixel noise, class mood words in captions.
    #[default]
    High,
    /// Weak contrast, heavy noise, captions without class words.
    Low,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub nouns: usize,
    pub adjectives_per_noun: usize,
    pub images_per_anp: usize,
    pub classes: usize,
    pub separability: Separability,
    /// Side of the square images, in pixels.
    pub image_size: u32,
    /// Share of records carrying legible text (routed to the text path).
    pub text_fraction: f64,
    /// Share of records whose image does not show their noun; the
    /// relevance filter should drop them.
    pub noise_fraction: f64,
    /// Scripted reasoning chains per image.
    pub chains: usize,
    pub encoder_dim: usize,
    pub ratios: (f64, f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            nouns: 8,
            adjectives_per_noun: 2,
            images_per_anp: 15,
            classes: 4,
            separability: Separability::High,
            image_size: 32,
            text_fraction: 0.1,
            noise_fraction: 0.1,
            chains: 5,
            encoder_dim: 64,
            ratios: (0.7, 0.15, 0.15),
        }
    }
}

/// An in-memory synthetic corpus. Records hold PNG buffers until written.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub records: Vec<ImageRecord>,
    pub taxonomy: EmotionTaxonomy,
    pub split: DatasetSplit,
    pub toy_table: ToyTable,
    pub chat: MockChatFixtures,
    pub ocr: BTreeMap<String, Vec<OcrRegion>>,
    /// Ids whose image is off-topic for its noun.
    pub noise_ids: BTreeSet<String>,
    /// Ids carrying embedded text.
    pub text_ids: BTreeSet<String>,
    /// Pipeline settings wired to the written files (relative paths).
    pub config: PipelineConfig,
}

/// Where [`SynthDataset::write`] put everything.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub dataset: PathBuf,
    pub split: PathBuf,
    pub taxonomy: PathBuf,
    pub toy_table: PathBuf,
    pub chat: PathBuf,
    pub ocr: PathBuf,
    pub config: PathBuf,
}

fn spec_error(message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        path: "<synth spec>".into(),
        message: message.into(),
    }
}

fn taxonomy_for(classes: usize) -> EmotionTaxonomy {
    let names: Vec<String> = if classes <= 8 {
        EmotionTaxonomy::fi8().classes()[..classes].to_vec()
    } else {
        (0..classes).map(|c| format!("class{c}")).collect()
    };
    EmotionTaxonomy::new(format!("synth{classes}"), names).expect("distinct class names")
}

fn moods(class: usize) -> Vec<String> {
    match MOODS.get(class) {
        Some(m) => m.iter().map(|s| s.to_string()).collect(),
        None => (0..3).map(|k| format!("mood{class}x{k}")).collect(),
    }
}

/// Binary cell pattern: `cells × 3` channel levels, each low or high.
fn pattern(rng: &mut ChaCha8Rng, cells: usize) -> Vec<bool> {
    (0..cells * 3).map(|_| rng.gen_bool(0.5)).collect()
}

fn distinct_patterns(rng: &mut ChaCha8Rng, n: usize, cells: usize) -> Vec<Vec<bool>> {
    let mut out: Vec<Vec<bool>> = Vec::with_capacity(n);
    while out.len() < n {
        let p = pattern(rng, cells);
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

fn render(size: u32, top: &[bool], bottom: &[bool], sep: Separability, rng: &mut ChaCha8Rng) -> RgbImage {
    let (lo, hi, noise) = match sep {
        Separability::High => (0.2, 0.8, 0.1),
        Separability::Low => (0.42, 0.58, 0.3),
    };
    let half = (GRID * GRID / 2) as usize;
    RgbImage::from_fn(size, size, |x, y| {
        let (cx, cy) = ((x * GRID / size) as usize, (y * GRID / size) as usize);
        let cell = cy * GRID as usize + cx;
        let bits = if cell < half {
            &top[cell * 3..cell * 3 + 3]
        } else {
            &bottom[(cell - half) * 3..(cell - half) * 3 + 3]
        };
        let mut px = [0u8; 3];
        for (c, &b) in bits.iter().enumerate() {
            let v: f64 = if b { hi } else { lo } + rng.gen_range(-noise..=noise);
            px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        Rgb(px)
    })
}

fn chain_text(anp: &Anp, caption: &str) -> String {
    format!(
        "SCENE: a synthetic {noun} scene\n\
         OBJECTS: {noun}\n\
         EXPRESSIONS: none\n\
         ACTIONS: none\n\
         RELATIONS: the {noun} fills the lower half\n\
         SCENE_INTERACTION: the {anp} sets the mood of the scene\n\
         CAPTION: {caption}",
        noun = anp.noun()
    )
}

/// Builds a corpus of `nouns × adjectives_per_noun × images_per_anp`
/// records. Pair `i` (nouns first, then adjectives) belongs to class
/// `i % classes`. Identical specs and seeds give identical corpora.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthDataset, HarnessError> {
    if spec.nouns == 0 || spec.adjectives_per_noun == 0 || spec.images_per_anp == 0 || spec.classes == 0 {
        return Err(spec_error("counts must be positive"));
    }
    if spec.nouns * spec.adjectives_per_noun < 2 {
        return Err(spec_error("need at least two adjective-noun pairs"));
    }
    if spec.chains == 0 || spec.encoder_dim == 0 || spec.image_size < GRID {
        return Err(spec_error(
            "chains and encoder_dim must be positive and images at least 4 pixels wide",
        ));
    }
    let fractions_ok = (0.0..=1.0).contains(&spec.text_fraction)
        && (0.0..=1.0).contains(&spec.noise_fraction)
        && spec.text_fraction + spec.noise_fraction <= 1.0;
    if !fractions_ok {
        return Err(spec_error(
            "text_fraction and noise_fraction must lie in [0, 1] and sum to at most 1",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taxonomy = taxonomy_for(spec.classes);
    let half = (GRID * GRID / 2) as usize;

    let noun_names: Vec<String> = (0..spec.nouns)
        .map(|n| NOUNS.get(n).map_or_else(|| format!("noun{n}"), |s| s.to_string()))
        .collect();
    let mut anps = Vec::new();
    for (n, noun) in noun_names.iter().enumerate() {
        for j in 0..spec.adjectives_per_noun {
            let adj = if spec.adjectives_per_noun <= ADJECTIVES.len() {
                ADJECTIVES[(n * spec.adjectives_per_noun + j) % ADJECTIVES.len()].to_string()
            } else {
                format!("adj{j}")
            };
            anps.push((n, Anp::new(&adj, noun).expect("generated labels are single words")));
        }
    }
    let noun_patterns = distinct_patterns(&mut rng, spec.nouns, half);
    let anp_patterns = distinct_patterns(&mut rng, anps.len(), half);

    let total = anps.len() * spec.images_per_anp;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let n_text = (total as f64 * spec.text_fraction).round() as usize;
    let n_noise = ((total as f64 * spec.noise_fraction).round() as usize).min(total - n_text);
    let text_idx: BTreeSet<usize> = order[..n_text].iter().copied().collect();
    let noise_idx: BTreeSet<usize> = order[n_text..n_text + n_noise].iter().copied().collect();

    let encoder = ToyEncoder::new(spec.encoder_dim);
    let mut toy_table = ToyTable {
        dim: spec.encoder_dim,
        images: BTreeMap::new(),
    };
    let mut chat = MockChatFixtures::default();
    let mut ocr = BTreeMap::new();
    let (mut noise_ids, mut text_ids) = (BTreeSet::new(), BTreeSet::new());
    let mut records = Vec::with_capacity(total);

    for (a, (n, anp)) in anps.iter().enumerate() {
        let class = a % spec.classes;
        let class_name = taxonomy.class_name(class).expect("class in range").to_string();
        // Runner-up concept: a sibling pair when the noun has one.
        let second = if spec.adjectives_per_noun > 1 {
            let base = a - a % spec.adjectives_per_noun;
            anps[base + (a % spec.adjectives_per_noun + 1) % spec.adjectives_per_noun]
                .1
                .clone()
        } else {
            anps[(a + 1) % anps.len()].1.clone()
        };
        let prompt = encoder
            .encode_text(&noun_prompt(anp.noun()).expect("non-empty noun"))
            .expect("toy text embedding");
        let prompt_unit: Vec<f64> = prompt.values().iter().map(|v| v / prompt.norm()).collect();

        for i in 0..spec.images_per_anp {
            let idx = a * spec.images_per_anp + i;
            let id = format!("img-{idx:05}");
            let noisy = noise_idx.contains(&idx);
            let img = if noisy {
                let top = pattern(&mut rng, half);
                let bottom = pattern(&mut rng, half);
                render(spec.image_size, &top, &bottom, spec.separability, &mut rng)
            } else {
                render(
                    spec.image_size,
                    &noun_patterns[*n],
                    &anp_patterns[a],
                    spec.separability,
                    &mut rng,
                )
            };

            let embedding: Vec<f64> = if noisy {
                (0..spec.encoder_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
            } else {
                let jitter = 0.1 / (spec.encoder_dim as f64).sqrt();
                prompt_unit.iter().map(|v| v + rng.gen_range(-jitter..jitter)).collect()
            };
            toy_table
                .images
                .insert(id.clone(), Embedding::new(embedding).expect("finite toy embedding"));

            let caption = match spec.separability {
                Separability::High => {
                    let m = moods(class);
                    let w: Vec<&String> = m.choose_multiple(&mut rng, 2).collect();
                    format!("a {anp} that feels {} and {}", w[0], w[1])
                }
                Separability::Low => format!("a {anp} in a {} scene", NEUTRAL.choose(&mut rng).expect("non-empty")),
            };
            let majority = spec.chains / 2 + 1;
            let mut replies: Vec<String> = (0..spec.chains)
                .map(|k| {
                    if k < majority {
                        chain_text(anp, &caption)
                    } else {
                        chain_text(anp, &format!("a blurry {} photo, take {k}", anp.noun()))
                    }
                })
                .collect();
            replies.shuffle(&mut rng);
            chat.captions.insert(id.clone(), replies);

            let mut rec = ImageRecord::from_buffer(id.clone(), encode_png(&img))
                .with_anp(anp.clone())
                .with_emotion(class);
            rec.caption = Some(caption);
            rec.concepts = Some(vec![anp.clone(), second.clone()]);
            if text_idx.contains(&idx) {
                let text = format!("feeling {class_name} right now");
                ocr.insert(
                    id.clone(),
                    vec![OcrRegion {
                        text: text.clone(),
                        confidence: 0.95,
                    }],
                );
                chat.text_replies.insert(text.clone(), class_name.clone());
                rec.embedded_text = Some(text);
                text_ids.insert(id.clone());
            }
            if noisy {
                noise_ids.insert(id.clone());
            }
            records.push(rec);
        }
    }

    let (tr, va, te) = spec.ratios;
    let split = split_dataset(&records, SplitRatios::new(tr, va, te), seed)?;
    let config = synth_config(spec, seed);
    Ok(SynthDataset {
        records,
        taxonomy,
        split,
        toy_table,
        chat,
        ocr,
        noise_ids,
        text_ids,
        config,
    })
}

/// Settings that train well on a synthetic corpus.
fn synth_config(spec: &SynthSpec, seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig {
        taxonomy: "taxonomy.json".into(),
        seed,
        detector_checkpoint: Some("detector.json".into()),
        classifier_checkpoint: Some("classifier.json".into()),
        encoder: Some(EncoderConfig {
            kind: EncoderKind::Toy,
            dim: spec.encoder_dim,
            endpoint: None,
            cache_dir: None,
            table: Some("toy_table.json".into()),
        }),
        ..PipelineConfig::default()
    };
    c.data.dataset = Some("dataset.jsonl".into());
    c.data.split = Some("split.json".into());
    c.chat.fixtures = Some("chat_fixtures.json".into());
    c.ocr.fixtures = Some("ocr_fixtures.json".into());
    c.loss.k_chains = spec.chains;
    c.loss.k_concepts = 3.min(spec.nouns * spec.adjectives_per_noun);
    c.detector.lr = 0.03;
    c.detector.batch_size = 9;
    c.detector.epochs = 30;
    c.detector.hidden_dim = 64;
    c.detector.embed_dim = 32;
    c.classifier.lr = 0.5;
    c.classifier.batch_size = 16;
    c.classifier.epochs = 30;
    c.classifier.buckets = 1024;
    c.classifier.token_dim = 16;
    c.classifier.hidden_dim = 16;
    (c.data.train_ratio, c.data.validation_ratio, c.data.test_ratio) = spec.ratios;
    c
}

impl SynthDataset {
    pub fn hierarchy(&self) -> LabelHierarchy {
        build_hierarchy(self.records.iter().filter_map(|r| r.anp.as_ref())).expect("synthetic labels are consistent")
    }

    /// Records of one split, in corpus order.
    pub fn select(&self, ids: &[String]) -> Vec<ImageRecord> {
        DatasetSplit::select(&self.records, ids).into_iter().cloned().collect()
    }

    /// Writes images under `dir/images/` plus the dataset, split, taxonomy,
    /// fixtures and a `pipeline.toml` that ties them together.
    pub fn write(&self, dir: &Path) -> Result<SynthPaths, HarnessError> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| HarnessError::io(&images, e))?;
        let mut on_disk = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let rel = PathBuf::from("images").join(format!("{}.png", r.id));
            if let PixelSource::Buffer(bytes) = &r.source {
                let p = dir.join(&rel);
                std::fs::write(&p, bytes).map_err(|e| HarnessError::io(&p, e))?;
            }
            on_disk.push(ImageRecord {
                source: PixelSource::Path(rel),
                ..r.clone()
            });
        }
        let paths = SynthPaths {
            dataset: dir.join("dataset.jsonl"),
            split: dir.join("split.json"),
            taxonomy: dir.join("taxonomy.json"),
            toy_table: dir.join("toy_table.json"),
            chat: dir.join("chat_fixtures.json"),
            ocr: dir.join("ocr_fixtures.json"),
            config: dir.join("pipeline.toml"),
        };
        write_jsonl(&paths.dataset, &on_disk)?;
        self.split.write(&paths.split)?;
        let json = |path: &Path, text: String| std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e));
        json(
            &paths.taxonomy,
            serde_json::to_string_pretty(&self.taxonomy).expect("serializes"),
        )?;
        json(
            &paths.toy_table,
            serde_json::to_string(&self.toy_table).expect("serializes"),
        )?;
        json(
            &paths.chat,
            serde_json::to_string_pretty(&self.chat).expect("serializes"),
        )?;
        json(&paths.ocr, serde_json::to_string_pretty(&self.ocr).expect("serializes"))?;
        self.config.save(&paths.config)?;
        Ok(paths)
    }
}
