use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClassifierError, ClassifierExample};
use crate::labels::Anp;

/// A (concept, caption) pair and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackEntry {
    pub source: String,
    pub anp: Anp,
    pub caption: String,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastivePack {
    pub anchor: PackEntry,
    pub positive: PackEntry,
    pub negatives: Vec<PackEntry>,
}

/// Where the positive comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Same image, second-ranked concept.
    #[default]
    ImageLevel,
    /// A different image of the same class, with its top concept. Falls back
    /// to `ImageLevel` when no such image is available.
    ClassLevel,
}

fn top_entry(e: &ClassifierExample) -> PackEntry {
    PackEntry {
        source: e.id.clone(),
        anp: e.concepts[0].clone(),
        caption: e.caption.clone(),
        class: e.emotion,
    }
}

/// Anchor = (top concept, own caption); positive per `mode`; up to
/// `n_negatives` (all when `None`) other-class examples, drawn without
/// replacement, each with its top concept.
pub fn build_contrastive_pack<R: Rng + ?Sized>(
    example: &ClassifierExample,
    others: &[&ClassifierExample],
    n_negatives: Option<usize>,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<ContrastivePack, ClassifierError> {
    if example.concepts.len() < 2 {
        return Err(ClassifierError::TooFewConcepts(example.id.clone()));
    }
    let candidates: Vec<&&ClassifierExample> = others
        .iter()
        .filter(|o| o.emotion != example.emotion && o.id != example.id)
        .collect();
    if candidates.is_empty() {
        return Err(ClassifierError::NoNegatives);
    }
    let image_positive = || PackEntry {
        source: example.id.clone(),
        anp: example.concepts[1].clone(),
        caption: example.caption.clone(),
        class: example.emotion,
    };
    let positive = match mode {
        SamplingMode::ImageLevel => image_positive(),
        SamplingMode::ClassLevel => {
            let same: Vec<&&ClassifierExample> = others
                .iter()
                .filter(|o| o.emotion == example.emotion && o.id != example.id && !o.concepts.is_empty())
                .collect();
            match same.choose(rng) {
                Some(o) => top_entry(o),
                None => image_positive(),
            }
        }
    };
    let n = n_negatives.unwrap_or(candidates.len()).min(candidates.len());
    let negatives = candidates.choose_multiple(rng, n).map(|o| top_entry(o)).collect();
    Ok(ContrastivePack {
        anchor: top_entry(example),
        positive,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ex(id: &str, concepts: &[&str], class: usize) -> ClassifierExample {
        ClassifierExample {
            id: id.into(),
            concepts: concepts.iter().map(|c| c.parse().unwrap()).collect(),
            caption: format!("caption of {id}"),
            emotion: class,
        }
    }

    #[test]
    fn rank_one_anchor_rank_two_positive() {
        let me = ex("i", &["bright sun", "warm beach", "calm sea"], 0);
        let other = ex("j", &["dark storm", "cold rain"], 1);
        let p = build_contrastive_pack(
            &me,
            &[&other],
            None,
            SamplingMode::ImageLevel,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(p.anchor.anp.to_string(), "bright sun");
        assert_eq!(p.positive.anp.to_string(), "warm beach");
        assert_eq!(p.anchor.caption, p.positive.caption);
        assert_eq!(p.negatives.len(), 1);
        assert_eq!(p.negatives[0].anp.to_string(), "dark storm");
    }

    #[test]
    fn same_class_only_is_an_error() {
        let me = ex("i", &["a b", "c d"], 0);
        let o = ex("j", &["e f", "g h"], 0);
        assert!(matches!(
            build_contrastive_pack(
                &me,
                &[&o],
                None,
                SamplingMode::ImageLevel,
                &mut ChaCha8Rng::seed_from_u64(0)
            ),
            Err(ClassifierError::NoNegatives)
        ));
    }

    #[test]
    fn samples_distinct_other_class_negatives() {
        let me = ex("i", &["a b", "c d"], 0);
        let others: Vec<ClassifierExample> = (0..10)
            .map(|k| ex(&format!("o{k}"), &["x y", "z w"], 1 + k % 3))
            .collect();
        let refs: Vec<&ClassifierExample> = others.iter().collect();
        let p = build_contrastive_pack(
            &me,
            &refs,
            Some(4),
            SamplingMode::ImageLevel,
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(p.negatives.len(), 4);
        let mut ids: Vec<&str> = p.negatives.iter().map(|n| n.source.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 4);
        assert!(p.negatives.iter().all(|n| n.class != 0));
    }

    #[test]
    fn class_level_positive_is_another_image() {
        let me = ex("i", &["a b", "c d"], 0);
        let mate = ex("m", &["e f", "g h"], 0);
        let neg = ex("n", &["x y", "z w"], 1);
        let p = build_contrastive_pack(
            &me,
            &[&mate, &neg],
            None,
            SamplingMode::ClassLevel,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(p.positive.source, "m");
        assert_eq!(p.positive.anp.to_string(), "e f");
        let alone = build_contrastive_pack(
            &me,
            &[&neg],
            None,
            SamplingMode::ClassLevel,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert_eq!(alone.positive.source, "i");
    }
}
