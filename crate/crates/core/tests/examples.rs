//! Worked examples for chain generation, the loss levels, ranking, filtering
//! and the end-to-end pipeline on hand-built fixtures.

mod common;

use std::collections::BTreeMap;

use emocap::anp_detector::{
    detector_loss, hierarchical_loss, rank_concepts, supervised_contrastive_loss, DetectorModel, LabelView,
    LabeledEmbeddingBatch,
};
use emocap::captioning::{generate_chains, CaptionError, MockChat, MockChatFixtures};
use emocap::classifier::ClassifierModel;
use emocap::dataset::ImageRecord;
use emocap::encoders::{filter_dataset, noun_prompt, Embedding, EncoderClient, ToyEncoder};
use emocap::harness::{run_pipeline, Pipeline, PipelineConfig};
use emocap::labels::Anp;
use emocap::preprocess::encode_png;
use emocap::routing::{MockOcr, OcrRegion, Route};
use emocap::taxonomy::EmotionTaxonomy;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const CHAIN: &str = "SCENE: a park\nOBJECTS: bench, tree\nEXPRESSIONS: none\nACTIONS: sitting\n\
                     RELATIONS: the bench sits under the tree\nSCENE_INTERACTION: shade falls on the bench\n\
                     CAPTION: a quiet bench in soft shade";

fn anp(s: &str) -> Anp {
    s.parse().unwrap()
}

fn scripted(replies: Vec<String>) -> MockChat {
    MockChat::new(MockChatFixtures {
        default_captions: replies,
        ..Default::default()
    })
}

#[test]
fn identical_replies_give_identical_chains() {
    let image = ImageRecord::from_buffer("a", Vec::new());
    let chains = generate_chains(&scripted(vec![CHAIN.into()]), "describe", Some(&image), 4).unwrap();
    assert_eq!(chains.len(), 4);
    assert!(chains.iter().all(|c| *c == chains[0]));
    assert_eq!(chains[0].caption, "a quiet bench in soft shade");
    assert_eq!(chains[0].attributes.facial_expressions, ["none observed"]);

    let one = generate_chains(&scripted(vec![CHAIN.into()]), "describe", Some(&image), 1).unwrap();
    assert_eq!(one.len(), 1);
}

#[test]
fn one_malformed_reply_names_its_index() {
    let image = ImageRecord::from_buffer("a", Vec::new());
    let mut replies = vec![CHAIN.to_string(); 5];
    replies[3] = "SCENE: a park\nOBJECTS: bench".into();
    let err = generate_chains(&scripted(replies), "describe", Some(&image), 5).unwrap_err();
    match err {
        CaptionError::Chains { indices, .. } => assert_eq!(indices, [3]),
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn mixed_batch_is_the_mean_of_both_levels() {
    let labels = ["ugly cat", "ugly cat", "adorable cat", "cute dog"];
    let vectors = vec![
        vec![1.0, 0.2, 0.0],
        vec![0.9, 0.1, 0.3],
        vec![0.2, 1.0, 0.1],
        vec![-0.5, 0.3, 1.0],
    ];
    let batch = LabeledEmbeddingBatch::from_raw(vectors.clone(), labels.iter().map(|l| anp(l)).collect()).unwrap();
    let nouns: Vec<String> = labels.iter().map(|l| anp(l).noun().to_string()).collect();
    let pairs: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
    for tau in [0.1, 0.5] {
        let expected = 0.5 * (naive_supcon(&vectors, &nouns, tau) + naive_supcon(&vectors, &pairs, tau));
        assert!((hierarchical_loss(&batch, tau).unwrap().loss - expected).abs() < 1e-9);
    }
    // Oracle for the fixed labels {A, A, B, B}.
    let ab = LabeledEmbeddingBatch::from_raw(
        vectors.clone(),
        vec![anp("red car"), anp("red car"), anp("blue car"), anp("blue car")],
    )
    .unwrap();
    let groups: Vec<String> = ["A", "A", "B", "B"].iter().map(|s| s.to_string()).collect();
    let got = supervised_contrastive_loss(&ab, LabelView::Anp, 0.1).unwrap().loss;
    assert!((got - naive_supcon(&vectors, &groups, 0.1)).abs() < 1e-9);
}

#[test]
fn uniform_logits_cost_log_c_plus_contrastive() {
    let labels = vec![anp("ugly cat"), anp("ugly cat"), anp("adorable cat"), anp("cute dog")];
    let classes = vec![anp("adorable cat"), anp("cute dog"), anp("ugly cat")];
    let vectors = vec![vec![1.0, 0.0], vec![0.8, 0.6], vec![0.0, 1.0], vec![-1.0, 0.1]];
    let batch = LabeledEmbeddingBatch::from_raw(vectors, labels).unwrap();
    let out = detector_loss(&batch, &vec![vec![0.7; 3]; 4], &classes, 0.2).unwrap();
    let con = hierarchical_loss(&batch, 0.2).unwrap().loss;
    assert!((out.cross_entropy - 3f64.ln()).abs() < 1e-12);
    assert!((out.loss - (3f64.ln() + con)).abs() < 1e-12);
}

#[test]
fn ranking_equals_sort_then_truncate() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let classes: Vec<Anp> = (0..12)
        .map(|i| Anp::new(&format!("adj{i}"), "scene").unwrap())
        .collect();
    for _ in 0..100 {
        let logits: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let k = rng.gen_range(2..=12);
        let got = rank_concepts(&classes, &logits, k).unwrap();
        let mut reference: Vec<usize> = (0..12).collect();
        reference.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
        let names: Vec<&Anp> = got.ranked.iter().map(|r| &r.anp).collect();
        let expected: Vec<&Anp> = reference[..k].iter().map(|&i| &classes[i]).collect();
        assert_eq!(names, expected);
    }
}

#[test]
fn filter_lower_bound_and_orthogonal_record() {
    let mut enc = ToyEncoder::new(32);
    let mut records = Vec::new();
    for (i, noun) in ["dog", "cat", "tree"].iter().enumerate() {
        let id = format!("r{i}");
        let text = enc.encode_text(&noun_prompt(noun).unwrap()).unwrap();
        let image = if *noun == "cat" {
            // Gram-Schmidt against the prompt vector.
            let t = text.values();
            let mut v: Vec<f64> = (0..32).map(|d| if d % 2 == 0 { 1.0 } else { -0.5 }).collect();
            let proj = v.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() / t.iter().map(|x| x * x).sum::<f64>();
            v.iter_mut().zip(t).for_each(|(a, b)| *a -= proj * b);
            Embedding::new(v).unwrap()
        } else {
            text
        };
        enc.insert_image(&id, image);
        records.push(ImageRecord::from_buffer(id, Vec::new()).with_anp(Anp::new("plain", noun).unwrap()));
    }
    let out = filter_dataset(&records, &enc, 0.95).unwrap();
    let removed: Vec<&str> = out.removed.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(removed, ["r1"]);
    assert!(out.scores[1].similarity.abs() < 1e-12);
    assert_eq!(filter_dataset(&records, &enc, -1.0).unwrap().retained.len(), 3);
}

fn png() -> Vec<u8> {
    encode_png(&RgbImage::from_fn(40, 30, |x, y| {
        Rgb([(x * 6) as u8, (y * 8) as u8, 90])
    }))
}

fn binary_pipeline() -> Pipeline {
    let taxonomy = EmotionTaxonomy::binary();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let classes = vec![anp("sunny beach"), anp("stormy beach"), anp("cute dog")];
    let detector = DetectorModel::init(classes, 4, 8, 4, &mut rng);
    let classifier = ClassifierModel::init(taxonomy.classes().to_vec(), 128, 8, 8, &mut rng);
    let mut chat = MockChatFixtures {
        default_captions: vec![CHAIN.into()],
        ..Default::default()
    };
    chat.text_replies.insert("so happy today".into(), "positive".into());
    let ocr = BTreeMap::from([(
        "texty".to_string(),
        vec![OcrRegion {
            text: "so happy today".into(),
            confidence: 0.95,
        }],
    )]);
    let mut config = PipelineConfig::default();
    config.loss.k_concepts = 2;
    Pipeline::new(
        taxonomy,
        detector,
        classifier,
        Box::new(MockChat::new(chat)),
        Box::new(MockOcr::new(ocr)),
        None,
        &config,
    )
    .unwrap()
}

#[test]
fn text_image_takes_the_text_path() {
    let p = binary_pipeline();
    let (class, trace) = run_pipeline(&ImageRecord::from_buffer("texty", png()), &p).unwrap();
    assert_eq!(trace.route, Route::TextPath);
    assert_eq!(p.taxonomy.class_name(class), Some("positive"));
    assert_eq!(trace.predicted_class, "positive");
    assert!(trace.probabilities.is_none());
}

#[test]
fn textless_image_takes_the_visual_path() {
    let p = binary_pipeline();
    let (_, trace) = run_pipeline(&ImageRecord::from_buffer("plain", png()), &p).unwrap();
    assert_eq!(trace.route, Route::VisualPath);
    assert_eq!(trace.concepts.len(), 2);
    assert_eq!(trace.caption.as_ref().unwrap().text, "a quiet bench in soft shade");
    let probs = trace.probabilities.as_ref().unwrap();
    assert_eq!(probs.len(), 2);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    let (_, again) = run_pipeline(&ImageRecord::from_buffer("plain", png()), &binary_pipeline()).unwrap();
    assert_eq!(
        serde_json::to_string(&trace).unwrap(),
        serde_json::to_string(&again).unwrap()
    );
}

#[test]
fn corrupt_image_fails_in_preprocessing() {
    let err = run_pipeline(
        &ImageRecord::from_buffer("bad", b"not an image".to_vec()),
        &binary_pipeline(),
    )
    .unwrap_err();
    assert_eq!(err.stage.to_string(), "preprocess");
    assert_eq!(err.id, "bad");
}
