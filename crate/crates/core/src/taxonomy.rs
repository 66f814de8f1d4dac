//! Emotion taxonomies. The class index is the classifier's output index.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy {0:?} has no classes")]
    Empty(String),
    #[error("taxonomy {name:?} lists class {class:?} twice")]
    Duplicate { name: String, class: String },
    #[error("unknown taxonomy {0:?} (built-ins: fi8, emotionroi6, binary)")]
    Unknown(String),
    #[error("reading taxonomy file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing taxonomy file {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyWire")]
pub struct EmotionTaxonomy {
    name: String,
    classes: Vec<String>,
}

#[derive(Deserialize)]
struct TaxonomyWire {
    name: String,
    classes: Vec<String>,
}

impl TryFrom<TaxonomyWire> for EmotionTaxonomy {
    type Error = TaxonomyError;

    fn try_from(w: TaxonomyWire) -> Result<Self, Self::Error> {
        EmotionTaxonomy::new(w.name, w.classes)
    }
}

impl EmotionTaxonomy {
    pub fn new<S: Into<String>>(name: S, classes: Vec<String>) -> Result<Self, TaxonomyError> {
        let name = name.into();
        if classes.is_empty() {
            return Err(TaxonomyError::Empty(name));
        }
        let classes: Vec<String> = classes.iter().map(|c| c.trim().to_lowercase()).collect();
        for (i, c) in classes.iter().enumerate() {
            if c.is_empty() || classes[..i].contains(c) {
                return Err(TaxonomyError::Duplicate { name, class: c.clone() });
            }
        }
        Ok(EmotionTaxonomy { name, classes })
    }

    /// The eight Mikels categories used by FI.
    pub fn fi8() -> Self {
        Self::builtin(
            "fi8",
            &[
                "amusement",
                "anger",
                "awe",
                "contentment",
                "disgust",
                "excitement",
                "fear",
                "sadness",
            ],
        )
    }

    pub fn emotion_roi6() -> Self {
        Self::builtin(
            "emotionroi6",
            &["surprise", "joy", "disgust", "fear", "sadness", "anger"],
        )
    }

    pub fn binary() -> Self {
        Self::builtin("binary", &["positive", "negative"])
    }

    fn builtin(name: &str, classes: &[&str]) -> Self {
        EmotionTaxonomy {
            name: name.to_string(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn by_name(name: &str) -> Result<Self, TaxonomyError> {
        match name.to_ascii_lowercase().as_str() {
            "fi8" | "fi" => Ok(Self::fi8()),
            "emotionroi6" | "emotionroi" | "eroi6" => Ok(Self::emotion_roi6()),
            "binary" => Ok(Self::binary()),
            _ => Err(TaxonomyError::Unknown(name.to_string())),
        }
    }

    /// Loads a `{"name", "classes": [...]}` override.
    pub fn from_json_file(path: &Path) -> Result<Self, TaxonomyError> {
        let p = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: p.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| TaxonomyError::Json { path: p, source })
    }

    /// A built-in name, or a path to a JSON override.
    pub fn resolve(spec: &str) -> Result<Self, TaxonomyError> {
        if Path::new(spec).is_file() {
            return Self::from_json_file(Path::new(spec));
        }
        Self::by_name(spec)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_name(&self, index: usize) -> Option<&str> {
        self.classes.get(index).map(String::as_str)
    }

    /// Case-insensitive lookup after trimming.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        let needle = name.trim().to_lowercase();
        self.classes.iter().position(|c| *c == needle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_have_expected_sizes() {
        assert_eq!(EmotionTaxonomy::fi8().len(), 8);
        assert_eq!(EmotionTaxonomy::emotion_roi6().len(), 6);
        assert_eq!(EmotionTaxonomy::binary().classes(), ["positive", "negative"]);
        assert_eq!(EmotionTaxonomy::fi8().index_of("  Sadness "), Some(7));
    }

    #[test]
    fn rejects_empty_and_duplicate_classes() {
        assert!(EmotionTaxonomy::new("x", vec![]).is_err());
        assert!(EmotionTaxonomy::new("x", vec!["joy".into(), "Joy".into()]).is_err());
    }

    #[test]
    fn json_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        std::fs::write(&path, r#"{"name": "tri", "classes": ["calm", "Tense", "bored"]}"#).unwrap();
        let t = EmotionTaxonomy::resolve(path.to_str().unwrap()).unwrap();
        assert_eq!(t.name(), "tri");
        assert_eq!(t.index_of("tense"), Some(1));
        assert!(EmotionTaxonomy::resolve("nope").is_err());
    }
}
