//! Supervised contrastive loss at noun and pair level, and the full detector
//! objective, each with analytic gradients w.r.t. the raw embeddings.
//!
//! For anchor `i` with positive set `P(i)` (same label, excluding `i`):
//!
//! ```text
//! ℓ_i = -(1/|P(i)|) Σ_{μ∈P(i)} log( exp(s_iμ/τ) / Σ_{η≠i} exp(s_iη/τ) )
//! ```
//!
//! with `s` the cosine similarity. Anchors without positives contribute 0.

use super::{DetectorError, LabelView, LabeledEmbeddingBatch, Reduction};
use crate::labels::Anp;
use crate::nn::{cross_entropy, log_sum_exp};

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutput {
    pub loss: f64,
    pub per_anchor: Vec<f64>,
    /// `∂loss/∂v_i` for every raw (unnormalized) embedding.
    pub grad: Vec<Vec<f64>>,
}

fn check_tau(tau: f64) -> Result<(), DetectorError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(DetectorError::BadTemperature(tau))
    }
}

/// Computes the loss over unit vectors via the Gram matrix, then maps the
/// similarity gradient back through the normalization.
fn supcon(
    batch: &LabeledEmbeddingBatch,
    groups: &[usize],
    tau: f64,
    reduction: Reduction,
) -> Result<ContrastiveOutput, DetectorError> {
    check_tau(tau)?;
    let n = batch.len();
    let dim = batch.embeddings()[0].dim();
    let mut norms = Vec::with_capacity(n);
    let mut unit = Vec::with_capacity(n);
    for (index, e) in batch.embeddings().iter().enumerate() {
        let nv = e.norm();
        if nv == 0.0 {
            return Err(DetectorError::Embedding {
                index,
                source: crate::encoders::EncoderError::ZeroNorm,
            });
        }
        norms.push(nv);
        unit.push(e.values().iter().map(|x| x / nv).collect::<Vec<f64>>());
    }
    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let s = crate::encoders::dot(&unit[i], &unit[j]);
            sim[i * n + j] = s;
            sim[j * n + i] = s;
        }
    }

    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / n as f64,
    };
    // g[i][j] = ∂ℓ_i/∂s_ij
    let mut g = vec![0.0; n * n];
    let mut per_anchor = vec![0.0; n];
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && groups[j] == groups[i]).collect();
        if positives.is_empty() {
            continue;
        }
        let row = &sim[i * n..(i + 1) * n];
        let others = (0..n).filter(|&j| j != i).map(|j| row[j] / tau);
        let lse = log_sum_exp(others);
        let mean_pos = positives.iter().map(|&j| row[j] / tau).sum::<f64>() / positives.len() as f64;
        per_anchor[i] = lse - mean_pos;
        let inv_p = 1.0 / positives.len() as f64;
        for j in (0..n).filter(|&j| j != i) {
            g[i * n + j] = (row[j] / tau - lse).exp() / tau;
        }
        for &j in &positives {
            g[i * n + j] -= inv_p / tau;
        }
    }

    let mut grad = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let c = (g[i * n + j] + g[j * n + i]) * scale;
            if c == 0.0 {
                continue;
            }
            let s = sim[i * n + j];
            for d in 0..dim {
                grad[i][d] += c * (unit[j][d] - s * unit[i][d]) / norms[i];
            }
        }
    }
    let loss = per_anchor.iter().sum::<f64>() * scale;
    Ok(ContrastiveOutput { loss, per_anchor, grad })
}

pub fn supervised_contrastive_loss(
    batch: &LabeledEmbeddingBatch,
    view: LabelView,
    tau: f64,
) -> Result<ContrastiveOutput, DetectorError> {
    supervised_contrastive_loss_with(batch, view, tau, Reduction::Sum)
}

pub fn supervised_contrastive_loss_with(
    batch: &LabeledEmbeddingBatch,
    view: LabelView,
    tau: f64,
    reduction: Reduction,
) -> Result<ContrastiveOutput, DetectorError> {
    supcon(batch, &batch.groups(view), tau, reduction)
}

/// Mean of the noun-level and pair-level terms.
pub fn hierarchical_loss(batch: &LabeledEmbeddingBatch, tau: f64) -> Result<ContrastiveOutput, DetectorError> {
    hierarchical_loss_with(batch, tau, Reduction::Sum)
}

pub fn hierarchical_loss_with(
    batch: &LabeledEmbeddingBatch,
    tau: f64,
    reduction: Reduction,
) -> Result<ContrastiveOutput, DetectorError> {
    let noun = supervised_contrastive_loss_with(batch, LabelView::Noun, tau, reduction)?;
    let anp = supervised_contrastive_loss_with(batch, LabelView::Anp, tau, reduction)?;
    let half = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect::<Vec<_>>();
    Ok(ContrastiveOutput {
        loss: 0.5 * (noun.loss + anp.loss),
        per_anchor: half(&noun.per_anchor, &anp.per_anchor),
        grad: noun.grad.iter().zip(&anp.grad).map(|(a, b)| half(a, b)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorLossOutput {
    pub loss: f64,
    pub cross_entropy: f64,
    pub contrastive: f64,
    pub grad_embeddings: Vec<Vec<f64>>,
    pub grad_logits: Vec<Vec<f64>>,
}

/// Mean cross-entropy of the head against each sample's pair class, plus the
/// hierarchical contrastive term. `classes[c]` is the pair for logit `c`.
pub fn detector_loss(
    batch: &LabeledEmbeddingBatch,
    logits: &[Vec<f64>],
    classes: &[Anp],
    tau: f64,
) -> Result<DetectorLossOutput, DetectorError> {
    detector_loss_with(batch, logits, classes, tau, Reduction::Sum)
}

pub fn detector_loss_with(
    batch: &LabeledEmbeddingBatch,
    logits: &[Vec<f64>],
    classes: &[Anp],
    tau: f64,
    reduction: Reduction,
) -> Result<DetectorLossOutput, DetectorError> {
    if logits.len() != batch.len() {
        return Err(DetectorError::Shape {
            what: "logit rows",
            expected: batch.len(),
            got: logits.len(),
        });
    }
    let n = batch.len() as f64;
    let mut ce = 0.0;
    let mut grad_logits = Vec::with_capacity(logits.len());
    for (row, anp) in logits.iter().zip(batch.anps()) {
        if row.len() != classes.len() {
            return Err(DetectorError::Shape {
                what: "logits per sample",
                expected: classes.len(),
                got: row.len(),
            });
        }
        let target = classes
            .iter()
            .position(|c| c == anp)
            .ok_or_else(|| DetectorError::UnknownClass(anp.clone()))?;
        let (l, mut g) = cross_entropy(row, target);
        ce += l / n;
        g.iter_mut().for_each(|v| *v /= n);
        grad_logits.push(g);
    }
    let con = hierarchical_loss_with(batch, tau, reduction)?;
    Ok(DetectorLossOutput {
        loss: ce + con.loss,
        cross_entropy: ce,
        contrastive: con.loss,
        grad_embeddings: con.grad,
        grad_logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anps(labels: &[&str]) -> Vec<Anp> {
        labels.iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn identical_embeddings_same_label_give_bs_log_bs_minus_one() {
        let batch = LabeledEmbeddingBatch::from_raw(vec![vec![0.2, -1.0, 3.0]; 3], anps(&["ugly cat"; 3])).unwrap();
        for tau in [0.07, 0.5, 3.0] {
            let out = supervised_contrastive_loss(&batch, LabelView::Anp, tau).unwrap();
            // 3 · ln 2
            assert!((out.loss - 2.0794415416798357).abs() < 1e-12, "{}", out.loss);
            assert_eq!(out.per_anchor.len(), 3);
        }
    }

    #[test]
    fn no_shared_labels_gives_zero() {
        let batch = LabeledEmbeddingBatch::from_raw(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            anps(&["ugly cat", "cute dog", "old car"]),
        )
        .unwrap();
        for view in [LabelView::Noun, LabelView::Anp] {
            let out = supervised_contrastive_loss(&batch, view, 0.1).unwrap();
            assert_eq!(out.loss, 0.0);
            assert!(out.grad.iter().flatten().all(|g| *g == 0.0));
        }
        assert_eq!(hierarchical_loss(&batch, 0.1).unwrap().loss, 0.0);
    }

    #[test]
    fn single_anp_batch_levels_coincide() {
        let batch = LabeledEmbeddingBatch::from_raw(
            vec![vec![1.0, 0.2], vec![0.3, 1.0], vec![-1.0, 0.5], vec![0.1, 0.1]],
            anps(&["ugly cat"; 4]),
        )
        .unwrap();
        let noun = supervised_contrastive_loss(&batch, LabelView::Noun, 0.2).unwrap().loss;
        let anp = supervised_contrastive_loss(&batch, LabelView::Anp, 0.2).unwrap().loss;
        assert_eq!(noun, anp);
        assert!((hierarchical_loss(&batch, 0.2).unwrap().loss - noun).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let batch = LabeledEmbeddingBatch::from_raw(vec![vec![1.0], vec![2.0]], anps(&["ugly cat"; 2])).unwrap();
        assert!(matches!(
            supervised_contrastive_loss(&batch, LabelView::Anp, 0.0),
            Err(DetectorError::BadTemperature(_))
        ));
        let zero = LabeledEmbeddingBatch::from_raw(vec![vec![0.0], vec![2.0]], anps(&["ugly cat"; 2])).unwrap();
        assert!(supervised_contrastive_loss(&zero, LabelView::Anp, 0.1).is_err());
        let classes = anps(&["ugly cat"]);
        assert!(matches!(
            detector_loss(&batch, &[vec![0.0]], &classes, 0.1),
            Err(DetectorError::Shape { .. })
        ));
        assert!(matches!(
            detector_loss(&batch, &[vec![0.0, 1.0], vec![0.0, 1.0]], &classes, 0.1),
            Err(DetectorError::Shape { .. })
        ));
        assert!(matches!(
            detector_loss(&batch, &[vec![0.0], vec![0.0]], &anps(&["cute dog"]), 0.1),
            Err(DetectorError::UnknownClass(_))
        ));
    }

    #[test]
    fn confident_logits_on_unique_nouns_vanish() {
        let labels = anps(&["ugly cat", "cute dog", "old car"]);
        let batch =
            LabeledEmbeddingBatch::from_raw(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]], labels.clone())
                .unwrap();
        let logits: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|c| if c == i { 50.0 } else { -50.0 }).collect())
            .collect();
        let out = detector_loss(&batch, &logits, &labels, 0.07).unwrap();
        assert!(out.loss.abs() < 1e-6, "{}", out.loss);
    }

    #[test]
    fn mean_reduction_divides_by_batch_size() {
        let batch = LabeledEmbeddingBatch::from_raw(
            vec![vec![1.0, 0.2], vec![0.3, 1.0], vec![-1.0, 0.5], vec![0.1, 0.4]],
            anps(&["ugly cat", "ugly cat", "cute cat", "cute cat"]),
        )
        .unwrap();
        let s = hierarchical_loss_with(&batch, 0.3, Reduction::Sum).unwrap();
        let m = hierarchical_loss_with(&batch, 0.3, Reduction::Mean).unwrap();
        assert!((s.loss / 4.0 - m.loss).abs() < 1e-12);
        assert!((s.grad[2][1] / 4.0 - m.grad[2][1]).abs() < 1e-12);
    }
}
