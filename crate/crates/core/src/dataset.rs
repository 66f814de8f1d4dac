//! Image records, the JSON Lines dataset format, and deterministic splits.
//!
//! One record per line:
//!
//! ```text
//! {"id": "img-0001", "path": "images/img-0001.png", "anp": {"adj": "cute", "noun": "dog"},
//!  "emotion": 3, "embedded_text": null}
//! ```
//!
//! `caption` (affective caption text) and `concepts` (ranked pairs, best
//! first) are optional extensions used when training the fusion classifier.
//! Relative paths are resolved against the directory holding the JSONL file.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::Anp;
use crate::taxonomy::EmotionTaxonomy;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?}: emotion index {index} out of range for taxonomy {taxonomy:?} ({classes} classes)")]
    EmotionOutOfRange {
        id: String,
        index: usize,
        taxonomy: String,
        classes: usize,
    },
    #[error("record {0:?} holds an in-memory pixel buffer and cannot be written as JSONL")]
    BufferNotSerializable(String),
    #[error("split ratios must be non-negative and sum to 1 (got {0:?})")]
    BadRatios((f64, f64, f64)),
    #[error("cannot split an empty dataset")]
    Empty,
    #[error("split file {path}: {source}")]
    SplitJson {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PixelSource {
    Path(PathBuf),
    Buffer(Vec<u8>),
}

impl PixelSource {
    pub fn read_bytes(&self) -> std::io::Result<Vec<u8>> {
        match self {
            PixelSource::Path(p) => std::fs::read(p),
            PixelSource::Buffer(b) => Ok(b.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub source: PixelSource,
    pub anp: Option<Anp>,
    pub emotion: Option<usize>,
    pub embedded_text: Option<String>,
    pub caption: Option<String>,
    pub concepts: Option<Vec<Anp>>,
}

impl ImageRecord {
    pub fn from_path<S: Into<String>, P: Into<PathBuf>>(id: S, path: P) -> Self {
        ImageRecord {
            id: id.into(),
            source: PixelSource::Path(path.into()),
            anp: None,
            emotion: None,
            embedded_text: None,
            caption: None,
            concepts: None,
        }
    }

    pub fn from_buffer<S: Into<String>>(id: S, bytes: Vec<u8>) -> Self {
        ImageRecord {
            source: PixelSource::Buffer(bytes),
            ..ImageRecord::from_path(id, PathBuf::new())
        }
    }

    pub fn with_anp(mut self, anp: Anp) -> Self {
        self.anp = Some(anp);
        self
    }

    pub fn with_emotion(mut self, class: usize) -> Self {
        self.emotion = Some(class);
        self
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    path: PathBuf,
    #[serde(default)]
    anp: Option<Anp>,
    #[serde(default)]
    emotion: Option<usize>,
    #[serde(default)]
    embedded_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    caption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    concepts: Option<Vec<Anp>>,
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ImageRecord>, DatasetError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: p.clone(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: p.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let r: RecordLine = serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
            path: p.clone(),
            line: n + 1,
            source,
        })?;
        if !seen.insert(r.id.clone()) {
            return Err(DatasetError::DuplicateId(r.id));
        }
        let full = if r.path.is_relative() {
            base.join(&r.path)
        } else {
            r.path
        };
        records.push(ImageRecord {
            id: r.id,
            source: PixelSource::Path(full),
            anp: r.anp,
            emotion: r.emotion,
            embedded_text: r.embedded_text,
            caption: r.caption,
            concepts: r.concepts,
        });
    }
    Ok(records)
}

/// Writes records one per line. Paths are written as stored, so callers that
/// want relocatable files should store relative paths.
pub fn write_jsonl(path: &Path, records: &[ImageRecord]) -> Result<(), DatasetError> {
    let p = path.display().to_string();
    let io = |source| DatasetError::Io {
        path: p.clone(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        let PixelSource::Path(ref rp) = r.source else {
            return Err(DatasetError::BufferNotSerializable(r.id.clone()));
        };
        let line = RecordLine {
            id: r.id.clone(),
            path: rp.clone(),
            anp: r.anp.clone(),
            emotion: r.emotion,
            embedded_text: r.embedded_text.clone(),
            caption: r.caption.clone(),
            concepts: r.concepts.clone(),
        };
        let json = serde_json::to_string(&line).expect("record serializes");
        writeln!(out, "{json}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Checks id uniqueness and that every emotion label indexes `taxonomy`.
pub fn validate(records: &[ImageRecord], taxonomy: &EmotionTaxonomy) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(DatasetError::DuplicateId(r.id.clone()));
        }
        if let Some(index) = r.emotion {
            if index >= taxonomy.len() {
                return Err(DatasetError::EmotionOutOfRange {
                    id: r.id.clone(),
                    index,
                    taxonomy: taxonomy.name().to_string(),
                    classes: taxonomy.len(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.80,
            validation: 0.05,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, validation: f64, test: f64) -> Self {
        SplitRatios {
            train,
            validation,
            test,
        }
    }
}

/// Seeded shuffle, then contiguous partition. Train and validation counts are
/// floored; test takes the remainder.
pub fn split_dataset(records: &[ImageRecord], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit, DatasetError> {
    let r = (ratios.train, ratios.validation, ratios.test);
    let all = [r.0, r.1, r.2];
    if all.iter().any(|x| !x.is_finite() || *x < 0.0) || ((r.0 + r.1 + r.2) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadRatios(r));
    }
    if records.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // The epsilon absorbs products such as 100 * 0.29 = 28.999999999999996.
    let count = |ratio: f64| ((n as f64 * ratio) + 1e-9).floor() as usize;
    let n_train = count(ratios.train).min(n);
    let n_val = count(ratios.validation).min(n - n_train);
    let ids = |range: &[usize]| range.iter().map(|&i| records[i].id.clone()).collect();
    Ok(DatasetSplit {
        train: ids(&order[..n_train]),
        validation: ids(&order[n_train..n_train + n_val]),
        test: ids(&order[n_train + n_val..]),
    })
}

impl DatasetSplit {
    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: p.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| DatasetError::SplitJson { path: p, source })
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let json = serde_json::to_string_pretty(self).expect("split serializes");
        std::fs::write(path, json + "\n").map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Records of `records` whose id is in `ids`, in `records` order.
    pub fn select<'a>(records: &'a [ImageRecord], ids: &[String]) -> Vec<&'a ImageRecord> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        records.iter().filter(|r| wanted.contains(r.id.as_str())).collect()
    }
}
