//! Naive reference implementations and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use emocap::anp_detector::{train_detector, DetectorSample, TrainingLog};
use emocap::captioning::MockChat;
use emocap::classifier::{train_classifier, ClassifierLog, SamplingMode};
use emocap::encoders::{filter_dataset, ToyEncoder};
use emocap::harness::{classifier_examples, synth_dataset, Pipeline, SynthDataset, SynthSpec};
use emocap::labels::Anp;
use emocap::routing::MockOcr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn cos(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    dot / (nu * nv)
}

/// Double-loop supervised contrastive loss, summed over anchors.
pub fn naive_supcon(vectors: &[Vec<f64>], groups: &[String], tau: f64) -> f64 {
    let n = vectors.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += (cos(&vectors[i], &vectors[a]) / tau).exp();
            }
        }
        let mut sum = 0.0;
        let mut count = 0;
        for p in 0..n {
            if p != i && groups[p] == groups[i] {
                sum += ((cos(&vectors[i], &vectors[p]) / tau).exp() / denom).ln();
                count += 1;
            }
        }
        if count > 0 {
            total += -sum / count as f64;
        }
    }
    total
}

pub fn naive_info_nce(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> f64 {
    let pos = (cos(anchor, positive) / tau).exp();
    let neg: f64 = negatives.iter().map(|n| (cos(anchor, n) / tau).exp()).sum();
    -(pos / (pos + neg)).ln()
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[Vec<f64>], step: f64, f: &dyn Fn(&[Vec<f64>]) -> f64) -> Vec<Vec<f64>> {
    let mut x = x.to_vec();
    let mut out = vec![vec![0.0; x[0].len()]; x.len()];
    for i in 0..x.len() {
        for d in 0..x[i].len() {
            let keep = x[i][d];
            x[i][d] = keep + step;
            let up = f(&x);
            x[i][d] = keep - step;
            let down = f(&x);
            x[i][d] = keep;
            out[i][d] = (up - down) / (2.0 * step);
        }
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with a floor for vanishing gradients.
pub fn relative_error(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let flat = |v: &[Vec<f64>]| v.iter().flatten().copied().collect::<Vec<f64>>();
    let (a, b) = (flat(a), flat(b));
    let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

pub fn random_vectors<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Random pair labels over a small vocabulary so positives are common.
pub fn random_anps<R: Rng>(rng: &mut R, n: usize, nouns: usize, adjectives: usize) -> Vec<Anp> {
    (0..n)
        .map(|_| {
            let a = rng.gen_range(0..adjectives);
            let b = rng.gen_range(0..nouns);
            Anp::new(&format!("adj{a}"), &format!("noun{b}")).unwrap()
        })
        .collect()
}

pub struct Trained {
    pub data: SynthDataset,
    pub pipeline: Pipeline,
    pub detector_log: TrainingLog,
    pub classifier_log: ClassifierLog,
    pub classifier_best_epoch: usize,
}

/// Synthesizes a corpus and trains both models on it exactly as the CLI does.
pub fn train_synth(spec: &SynthSpec, seed: u64, sampling: SamplingMode) -> Trained {
    let mut data = synth_dataset(spec, seed).unwrap();
    data.config.classifier.sampling = sampling;
    // Drop off-topic images the way `filter` does before any training.
    let mut encoder = ToyEncoder::new(data.toy_table.dim);
    for (id, e) in &data.toy_table.images {
        encoder.insert_image(id, e.clone());
    }
    let kept = filter_dataset(&data.records, &encoder, data.config.loss.anp_threshold).unwrap();
    let kept: BTreeSet<String> = kept.retained.into_iter().map(|r| r.id).collect();
    for ids in [&mut data.split.train, &mut data.split.validation] {
        ids.retain(|id| kept.contains(id));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let det_cfg = data.config.detector_config();
    let train = DetectorSample::prepare(&data.select(&data.split.train), det_cfg.grid, true, &mut rng).unwrap();
    let validation =
        DetectorSample::prepare(&data.select(&data.split.validation), det_cfg.grid, false, &mut rng).unwrap();
    let detector = train_detector(&train, &validation, &data.hierarchy(), &det_cfg, &mut rng).unwrap();

    let ocr = MockOcr::new(data.ocr.clone());
    let train_records = data.select(&data.split.train);
    let (train_ex, _) = classifier_examples(&train_records, Some((&ocr, &data.config.routing))).unwrap();
    let val_records = data.select(&data.split.validation);
    let (val_ex, _) = classifier_examples(&val_records, None).unwrap();
    let cls_cfg = data.config.classifier_config();
    let classifier = train_classifier(&train_ex, &val_ex, &data.taxonomy, &cls_cfg, &mut rng).unwrap();

    let pipeline = Pipeline::new(
        data.taxonomy.clone(),
        detector.model,
        classifier.model,
        Box::new(MockChat::new(data.chat.clone())),
        Box::new(MockOcr::new(data.ocr.clone())),
        None,
        &data.config,
    )
    .unwrap();
    Trained {
        data,
        pipeline,
        detector_log: detector.log,
        classifier_log: classifier.log,
        classifier_best_epoch: classifier.best_epoch,
    }
}
