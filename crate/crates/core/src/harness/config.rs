use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::anp_detector::{DetectorTrainConfig, LossConfig};
use crate::captioning::{CaptionSimilarity, ChatConfig, ChatKind, DEFAULT_MERGE_THRESHOLD};
use crate::classifier::ClassifierTrainConfig;
use crate::dataset::SplitRatios;
use crate::encoders::EncoderConfig;
use crate::routing::{OcrConfig, OcrKind, RoutingConfig};
use crate::taxonomy::EmotionTaxonomy;

/// Dataset inputs. Without a split file, records are split with
/// the configured ratios and the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub train_ratio: f64,
    pub validation_ratio: f64,
    pub test_ratio: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let r = SplitRatios::default();
        DataConfig {
            dataset: None,
            split: None,
            train_ratio: r.train,
            validation_ratio: r.validation,
            test_ratio: r.test,
        }
    }
}

impl DataConfig {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios::new(self.train_ratio, self.validation_ratio, self.test_ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptioningConfig {
    pub similarity: CaptionSimilarity,
    pub merge_threshold: f64,
}

impl Default for CaptioningConfig {
    fn default() -> Self {
        CaptioningConfig {
            similarity: CaptionSimilarity::Exact,
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
        }
    }
}

/// Everything a run needs, read from TOML (or JSON when the file ends in
/// `.json`).
///
/// Relative paths are resolved against the config file's directory. The
/// `[loss]` table is shared by every stage; `loss` tables nested under
/// `[detector]` or `[classifier]` must agree with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Built-in taxonomy name or path to a JSON override.
    pub taxonomy: String,
    pub seed: u64,
    pub detector_checkpoint: Option<PathBuf>,
    pub classifier_checkpoint: Option<PathBuf>,
    /// Leave images routed to the text path out of classifier training.
    pub exclude_text_path: bool,
    pub data: DataConfig,
    pub encoder: Option<EncoderConfig>,
    pub chat: ChatConfig,
    pub ocr: OcrConfig,
    pub loss: LossConfig,
    pub routing: RoutingConfig,
    pub captioning: CaptioningConfig,
    pub detector: DetectorTrainConfig,
    pub classifier: ClassifierTrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            taxonomy: "fi8".into(),
            seed: 0,
            detector_checkpoint: None,
            classifier_checkpoint: None,
            exclude_text_path: true,
            data: DataConfig::default(),
            encoder: None,
            chat: ChatConfig {
                kind: ChatKind::Mock,
                endpoint: None,
                model_name: None,
                temperature: 0.7,
                cache_dir: None,
                fixtures: None,
            },
            ocr: OcrConfig {
                kind: OcrKind::Mock,
                endpoint: None,
                cache_dir: None,
                fixtures: None,
            },
            loss: LossConfig::default(),
            routing: RoutingConfig::default(),
            captioning: CaptioningConfig::default(),
            detector: DetectorTrainConfig::default(),
            classifier: ClassifierTrainConfig::default(),
        }
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn strip_nulls(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|_, x| !x.is_null());
            map.values_mut().for_each(strip_nulls);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_nulls),
        _ => {}
    }
}

impl PipelineConfig {
    /// Parses, resolves relative paths, and checks that referenced input
    /// files (fixtures, tables, dataset, split) exist.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config = Self::parse(&text, is_json(path)).map_err(|message| HarnessError::Config {
            path: path.display().to_string(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.check(path)?;
        Ok(config)
    }

    pub fn parse(text: &str, json: bool) -> Result<Self, String> {
        if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        }
    }

    /// Writes TOML, or JSON when `path` ends in `.json`. Paths are written
    /// as they are held; unset options and the nested loss tables are left
    /// out.
    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        strip_nulls(&mut value);
        for section in ["detector", "classifier"] {
            if let Some(obj) = value.get_mut(section).and_then(|v| v.as_object_mut()) {
                obj.remove("loss");
            }
        }
        let text = if is_json(path) {
            serde_json::to_string_pretty(&value).expect("config serializes") + "\n"
        } else {
            toml::to_string(&value).map_err(|e| HarnessError::Config {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        };
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.detector_checkpoint);
        fix(&mut self.classifier_checkpoint);
        fix(&mut self.data.dataset);
        fix(&mut self.data.split);
        if let Some(e) = self.encoder.as_mut() {
            fix(&mut e.table);
            fix(&mut e.cache_dir);
        }
        fix(&mut self.chat.fixtures);
        fix(&mut self.chat.cache_dir);
        fix(&mut self.ocr.fixtures);
        fix(&mut self.ocr.cache_dir);
        let tax = base.join(&self.taxonomy);
        if Path::new(&self.taxonomy).is_relative() && tax.is_file() {
            self.taxonomy = tax.display().to_string();
        }
    }

    fn check(&self, path: &Path) -> Result<(), HarnessError> {
        let err = |message: String| HarnessError::Config {
            path: path.display().to_string(),
            message,
        };
        let inputs = [
            self.data.dataset.as_ref(),
            self.data.split.as_ref(),
            self.encoder.as_ref().and_then(|e| e.table.as_ref()),
            self.chat.fixtures.as_ref(),
            self.ocr.fixtures.as_ref(),
        ];
        if let Some(missing) = inputs.into_iter().flatten().find(|p| !p.is_file()) {
            return Err(err(format!("referenced file {} does not exist", missing.display())));
        }
        self.loss.validate().map_err(|e| err(e.to_string()))?;
        let default_loss = LossConfig::default();
        for (section, loss) in [("detector", &self.detector.loss), ("classifier", &self.classifier.loss)] {
            if *loss != default_loss && *loss != self.loss {
                return Err(err(format!(
                    "[{section}.loss] disagrees with [loss]; set loss values under [loss]"
                )));
            }
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<EmotionTaxonomy, HarnessError> {
        Ok(EmotionTaxonomy::resolve(&self.taxonomy)?)
    }

    /// Detector settings with the shared loss table applied.
    pub fn detector_config(&self) -> DetectorTrainConfig {
        DetectorTrainConfig {
            loss: self.loss.clone(),
            ..self.detector.clone()
        }
    }

    /// Classifier settings with the shared loss table applied.
    pub fn classifier_config(&self) -> ClassifierTrainConfig {
        ClassifierTrainConfig {
            loss: self.loss.clone(),
            ..self.classifier.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::SamplingMode;

    #[test]
    fn empty_toml_is_all_defaults() {
        assert_eq!(PipelineConfig::parse("", false).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn nested_keys_and_unknown_keys() {
        let c = PipelineConfig::parse(
            "seed = 7\n[classifier]\nsampling = \"class_level\"\n[routing]\nmin_chars = 4\n",
            false,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.classifier.sampling, SamplingMode::ClassLevel);
        assert_eq!(c.routing.min_chars, 4);
        assert!(PipelineConfig::parse("sede = 7", false).is_err());
        for nested in [
            "[classifier]\nsampler = 1",
            "[loss]\ntemperature = 1.0",
            "[chat]\nkind = \"mock\"\nfixture = \"x\"",
        ] {
            assert!(PipelineConfig::parse(nested, false).is_err(), "{nested}");
        }
    }

    #[test]
    fn toml_and_json_round_trip_and_resolve_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("chat.json"), "{}").unwrap();
        let mut c = PipelineConfig::default();
        c.chat.fixtures = Some("chat.json".into());
        c.detector_checkpoint = Some("det.json".into());
        for name in ["p.toml", "p.json"] {
            let p = dir.path().join(name);
            c.save(&p).unwrap();
            let back = PipelineConfig::load(&p).unwrap();
            assert_eq!(back.chat.fixtures.unwrap(), dir.path().join("chat.json"));
            assert_eq!(back.detector_checkpoint.unwrap(), dir.path().join("det.json"));
        }
    }

    #[test]
    fn missing_fixture_and_conflicting_loss_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.toml");
        std::fs::write(&p, "[ocr]\nkind = \"mock\"\nfixtures = \"nope.json\"\n").unwrap();
        assert!(PipelineConfig::load(&p).unwrap_err().to_string().contains("nope.json"));
        std::fs::write(&p, "[loss]\ntau = 0.5\n[detector.loss]\ntau = 0.2\n").unwrap();
        assert!(PipelineConfig::load(&p).is_err());
        std::fs::write(&p, "[loss]\ntau = 0.5\n").unwrap();
        assert_eq!(PipelineConfig::load(&p).unwrap().classifier_config().loss.tau, 0.5);
    }
}
