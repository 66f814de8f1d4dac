use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_template, BagEncoder, ClassifierError, FusionEncoder};
use crate::labels::Anp;
use crate::nn::{softmax, Dense};
use crate::taxonomy::EmotionTaxonomy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub encoder: BagEncoder,
    pub head: Dense,
    /// Class names in output order.
    pub classes: Vec<String>,
}

impl ClassifierModel {
    pub fn init<R: Rng + ?Sized>(
        classes: Vec<String>,
        buckets: usize,
        token_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let encoder = BagEncoder::init(buckets, token_dim, hidden_dim, rng);
        let head = Dense::init(hidden_dim, classes.len(), rng);
        ClassifierModel { encoder, head, classes }
    }

    /// The `[CLS]` vector of the fused input.
    pub fn features(&self, anp: &Anp, caption: &str) -> Result<Vec<f64>, ClassifierError> {
        Ok(self.encoder.embed(&build_template(anp, caption)?))
    }
}

/// Class probabilities for one (concept, caption) input.
pub fn classify(
    model: &ClassifierModel,
    anp: &Anp,
    caption: &str,
    taxonomy: &EmotionTaxonomy,
) -> Result<Vec<f64>, ClassifierError> {
    classify_with(&model.encoder, &model.head, anp, caption, taxonomy)
}

/// [`classify`] for any encoder and head.
pub fn classify_with(
    encoder: &dyn FusionEncoder,
    head: &Dense,
    anp: &Anp,
    caption: &str,
    taxonomy: &EmotionTaxonomy,
) -> Result<Vec<f64>, ClassifierError> {
    if head.outputs != taxonomy.len() {
        return Err(ClassifierError::HeadMismatch {
            head: head.outputs,
            taxonomy: taxonomy.len(),
        });
    }
    if head.inputs != encoder.dim() {
        return Err(ClassifierError::Shape {
            what: "head input width",
            expected: encoder.dim(),
            got: head.inputs,
        });
    }
    let h = encoder.embed(&build_template(anp, caption)?);
    Ok(softmax(&head.forward(&h)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::FusionTemplate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Embeds a template as (number of pair tokens, number of caption tokens).
    struct CountEncoder;

    impl FusionEncoder for CountEncoder {
        fn dim(&self) -> usize {
            2
        }

        fn embed(&self, t: &FusionTemplate) -> Vec<f64> {
            vec![t.anp_segment().len() as f64, t.caption_segment().len() as f64]
        }
    }

    #[test]
    fn hand_computed_softmax() {
        let head = Dense {
            inputs: 2,
            outputs: 2,
            weight: vec![1.0, 0.0, 0.0, 1.0],
            bias: vec![0.0, 0.5],
        };
        let p = classify_with(
            &CountEncoder,
            &head,
            &"cute dog".parse().unwrap(),
            "a b c",
            &EmotionTaxonomy::binary(),
        )
        .unwrap();
        // logits (2, 3.5)
        let e = (1.5f64).exp();
        assert!((p[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((p[1] - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn scaled_one_hot_wins() {
        let head = Dense {
            inputs: 2,
            outputs: 8,
            weight: (0..16).map(|i| if i == 2 * 5 + 1 { 100.0 } else { 0.0 }).collect(),
            bias: vec![0.0; 8],
        };
        let p = classify_with(
            &CountEncoder,
            &head,
            &"cute dog".parse().unwrap(),
            "x",
            &EmotionTaxonomy::fi8(),
        )
        .unwrap();
        assert_eq!(crate::nn::argmax(&p), 5);
    }

    #[test]
    fn output_is_a_distribution_and_sizes_are_checked() {
        let tax = EmotionTaxonomy::fi8();
        let m = ClassifierModel::init(tax.classes().to_vec(), 64, 4, 6, &mut ChaCha8Rng::seed_from_u64(0));
        let p = classify(&m, &"cute dog".parse().unwrap(), "a dog plays", &tax).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(matches!(
            classify(&m, &"cute dog".parse().unwrap(), "a", &EmotionTaxonomy::binary()),
            Err(ClassifierError::HeadMismatch { head: 8, taxonomy: 2 })
        ));
    }
}
