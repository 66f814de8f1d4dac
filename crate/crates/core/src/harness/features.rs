use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::classifier::ClassifierModel;
use crate::dataset::ImageRecord;

pub const FEATURE_FORMAT: &str = "emocap-features";

/// First line of a feature file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub classes: Vec<String>,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub emotion: Option<usize>,
    pub vector: Vec<f64>,
}

/// The classifier's `[CLS]` vector for every record, reading the rank-1
/// concept (or the record's own label when it has no ranked concepts) and
/// the caption.
pub fn feature_rows(records: &[ImageRecord], model: &ClassifierModel) -> Result<Vec<FeatureRow>, HarnessError> {
    records
        .par_iter()
        .map(|r| {
            let missing = |what: &str| HarnessError::Record {
                id: r.id.clone(),
                message: format!("no {what} for feature export"),
            };
            let anp = r
                .concepts
                .as_ref()
                .and_then(|c| c.first())
                .or(r.anp.as_ref())
                .ok_or_else(|| missing("concept"))?;
            let caption = r.caption.as_deref().ok_or_else(|| missing("caption"))?;
            let vector = model.features(anp, caption)?;
            Ok(FeatureRow {
                id: r.id.clone(),
                emotion: r.emotion,
                vector,
            })
        })
        .collect()
}

/// Writes a JSON header line, then one tab-separated row per record:
/// id, emotion index (empty when unknown), then the vector components.
/// Returns the number of rows.
pub fn export_features(records: &[ImageRecord], model: &ClassifierModel, out: &Path) -> Result<usize, HarnessError> {
    let rows = feature_rows(records, model)?;
    let header = FeatureHeader {
        format: FEATURE_FORMAT.into(),
        version: 1,
        dim: model.encoder.proj.outputs,
        classes: model.classes.clone(),
        columns: vec!["id".into(), "emotion".into(), "h_cls".into()],
    };
    let mut text = serde_json::to_string(&header).expect("header serializes");
    text.push('\n');
    for r in &rows {
        text.push_str(&r.id);
        text.push('\t');
        if let Some(e) = r.emotion {
            text.push_str(&e.to_string());
        }
        for v in &r.vector {
            text.push('\t');
            text.push_str(&v.to_string());
        }
        text.push('\n');
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(out).map_err(|e| HarnessError::io(out, e))?;
    f.write_all(text.as_bytes()).map_err(|e| HarnessError::io(out, e))?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn records(n: usize) -> Vec<ImageRecord> {
        (0..n)
            .map(|i| {
                let mut r = ImageRecord::from_path(format!("r{i}"), "x.png")
                    .with_anp("cute dog".parse().unwrap())
                    .with_emotion(i % 2);
                r.caption = Some(format!("a happy dog number {i}"));
                r
            })
            .collect()
    }

    #[test]
    fn five_rows_of_encoder_width_and_stable_bytes() {
        let model = ClassifierModel::init(
            vec!["a".into(), "b".into()],
            64,
            4,
            6,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let dir = tempfile::tempdir().unwrap();
        let (p, q) = (dir.path().join("f.tsv"), dir.path().join("g.tsv"));
        assert_eq!(export_features(&records(5), &model, &p).unwrap(), 5);
        export_features(&records(5), &model, &q).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, std::fs::read_to_string(&q).unwrap());
        let mut lines = text.lines();
        let header: FeatureHeader = serde_json::from_str(lines.next().unwrap()).unwrap();
        assert_eq!(header.dim, 6);
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|l| l.split('\t').count() == 2 + 6));
    }

    #[test]
    fn missing_caption_names_record() {
        let model = ClassifierModel::init(vec!["a".into(), "b".into()], 8, 2, 2, &mut ChaCha8Rng::seed_from_u64(0));
        let mut rs = records(2);
        rs[1].caption = None;
        assert!(feature_rows(&rs, &model).unwrap_err().to_string().contains("r1"));
    }
}
