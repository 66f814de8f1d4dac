//! Anchor/positive/negatives contrastive loss on fusion embeddings:
//!
//! ```text
//! ℓ = -log( exp(s(z¹,z²)/τ) / ( exp(s(z¹,z²)/τ) + Σ_neg exp(s(z¹,z_neg)/τ) ) )
//! ```
//!
//! with `s` the cosine similarity.

use super::{build_template, ClassifierError, ContrastivePack, FusionEncoder};
use crate::encoders::{dot, norm};
use crate::nn::log_sum_exp;

#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceOutput {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

fn unit(v: &[f64]) -> Result<(Vec<f64>, f64), ClassifierError> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(ClassifierError::DegenerateEmbedding);
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// Loss and gradients w.r.t. every raw embedding.
pub fn info_nce(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[Vec<f64>],
    tau: f64,
) -> Result<InfoNceOutput, ClassifierError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ClassifierError::BadTemperature(tau));
    }
    if negatives.is_empty() {
        return Err(ClassifierError::NoNegatives);
    }
    let dim = anchor.len();
    if let Some(v) = std::iter::once(positive)
        .chain(negatives.iter().map(Vec::as_slice))
        .find(|v| v.len() != dim)
    {
        return Err(ClassifierError::Shape {
            what: "pack embedding dimension",
            expected: dim,
            got: v.len(),
        });
    }
    let (ua, na) = unit(anchor)?;
    // Index 0 is the positive, 1.. the negatives.
    let others: Vec<(Vec<f64>, f64)> = std::iter::once(positive)
        .chain(negatives.iter().map(Vec::as_slice))
        .map(unit)
        .collect::<Result<_, _>>()?;
    let scores: Vec<f64> = others.iter().map(|(u, _)| dot(&ua, u)).collect();
    let lse = log_sum_exp(scores.iter().map(|s| s / tau));
    let loss = lse - scores[0] / tau;

    // ∂ℓ/∂s_k = (softmax_k - [k = 0]) / τ
    let d_scores: Vec<f64> = scores
        .iter()
        .enumerate()
        .map(|(k, s)| ((s / tau - lse).exp() - if k == 0 { 1.0 } else { 0.0 }) / tau)
        .collect();
    let mut grad_anchor = vec![0.0; dim];
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(others.len());
    for (((u, n), s), ds) in others.iter().zip(&scores).zip(&d_scores) {
        for d in 0..dim {
            grad_anchor[d] += ds * (u[d] - s * ua[d]) / na;
        }
        grads.push((0..dim).map(|d| ds * (ua[d] - s * u[d]) / n).collect());
    }
    let grad_positive = grads.remove(0);
    Ok(InfoNceOutput {
        loss,
        grad_anchor,
        grad_positive,
        grad_negatives: grads,
    })
}

/// Embeds every member of `pack` and scores it.
pub fn semantic_contrastive_loss(
    pack: &ContrastivePack,
    encoder: &dyn FusionEncoder,
    tau: f64,
) -> Result<f64, ClassifierError> {
    let embed = |e: &super::PackEntry| build_template(&e.anp, &e.caption).map(|t| encoder.embed(&t));
    let negatives = pack.negatives.iter().map(embed).collect::<Result<Vec<_>, _>>()?;
    Ok(info_nce(&embed(&pack.anchor)?, &embed(&pack.positive)?, &negatives, tau)?.loss)
}

/// Classification loss plus the weighted contrastive term.
pub fn total_loss(ce: f64, con: f64, lambda_mix: f64) -> f64 {
    ce + lambda_mix * con
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_scores_give_log_one_plus_n() {
        let v = vec![0.3, -0.2, 0.9];
        for n in 1..=8 {
            let out = info_nce(&v, &v, &vec![v.clone(); n], 0.07).unwrap();
            assert!((out.loss - ((1 + n) as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn asymmetric_case() {
        // s(z¹,z²) = 1, s(z¹,z_neg) = 0, τ = 0.5 ⇒ scaled scores 2 and 0.
        let out = info_nce(&[1.0, 0.0], &[2.0, 0.0], &[vec![0.0, 3.0]], 0.5).unwrap();
        assert!((out.loss - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((out.loss - 0.126928).abs() < 1e-6);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            info_nce(&[1.0], &[1.0], &[], 0.1),
            Err(ClassifierError::NoNegatives)
        ));
        assert!(matches!(
            info_nce(&[1.0], &[1.0], &[vec![1.0]], 0.0),
            Err(ClassifierError::BadTemperature(_))
        ));
        assert!(matches!(
            info_nce(&[0.0], &[1.0], &[vec![1.0]], 0.1),
            Err(ClassifierError::DegenerateEmbedding)
        ));
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(0.5, 0.3, 1.0) - 0.8).abs() < 1e-12);
        assert_eq!(total_loss(0.5, 0.3, 0.0), 0.5);
        assert_eq!(total_loss(0.0, 0.0, 7.0), 0.0);
    }
}
