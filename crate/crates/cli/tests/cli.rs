//! Drives the `emocap` binary over a synthetic corpus.

use std::path::Path;
use std::process::{Command, Output};

fn emocap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emocap"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = emocap(dir, args);
    assert!(
        out.status.success(),
        "emocap {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text.trim()).unwrap()
}

/// Synthesizes, filters and trains both models inside `dir`.
fn prepare(dir: &Path) {
    ok(dir, &["synth", "--seed", "3", "--out", "corpus"]);
    let filtered = json(&ok(
        dir,
        &[
            "--config",
            "corpus/pipeline.toml",
            "filter",
            "--out",
            "corpus/filtered.jsonl",
        ],
    ));
    assert_eq!(filtered["total"], 240);
    assert_eq!(filtered["removed"].as_array().unwrap().len(), 24);
    let det = json(&ok(
        dir,
        &[
            "--config",
            "corpus/pipeline.toml",
            "train-detector",
            "--data",
            "corpus/filtered.jsonl",
        ],
    ));
    assert!(det["final_loss"].as_f64().unwrap() < det["initial_loss"].as_f64().unwrap());
    let cls = json(&ok(
        dir,
        &[
            "--config",
            "corpus/pipeline.toml",
            "train-classifier",
            "--data",
            "corpus/filtered.jsonl",
        ],
    ));
    assert!(cls["excluded_text_path"].as_u64().unwrap() > 0);
    assert!(cls["validation_accuracy"].as_f64().unwrap() >= 0.95);
}

#[test]
fn synth_train_eval_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    let cfg = ["--config", "corpus/pipeline.toml"];
    for n in ["1", "2"] {
        let report = format!("report{n}.json");
        let traces = format!("traces{n}.jsonl");
        let run = format!("run{n}.jsonl");
        ok(
            dir,
            &[&cfg[..], &["eval", "--out", &report, "--traces", &traces]].concat(),
        );
        ok(dir, &[&cfg[..], &["run", "--split", "test", "--out", &run]].concat());
    }
    for (a, b) in [
        ("report1.json", "report2.json"),
        ("traces1.jsonl", "traces2.jsonl"),
        ("run1.jsonl", "run2.jsonl"),
    ] {
        let (a, b) = (std::fs::read(dir.join(a)).unwrap(), std::fs::read(dir.join(b)).unwrap());
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }
    let report = json(&std::fs::read_to_string(dir.join("report1.json")).unwrap());
    assert!(report["top1_accuracy"].as_f64().unwrap() > 0.5);
    assert_eq!(report["failures"].as_array().unwrap().len(), 0);

    // Single-image verbs against the trained checkpoints.
    let image = "corpus/images/img-00000.png";
    let anps = json(&ok(dir, &[&cfg[..], &["predict-anps", "--image", image]].concat()));
    assert_eq!(anps["ranked"].as_array().unwrap().len(), 3);
    let route = json(&ok(dir, &[&cfg[..], &["route", "--image", image]].concat()));
    assert_eq!(route["decision"]["route"], "visual_path");
    let ocr = json(&std::fs::read_to_string(dir.join("corpus/ocr_fixtures.json")).unwrap());
    let texty = ocr.as_object().unwrap().keys().next().unwrap().clone();
    let route = json(&ok(
        dir,
        &[&cfg[..], &["route", "--image", &format!("corpus/images/{texty}.png")]].concat(),
    ));
    assert_eq!(route["decision"]["route"], "text_path");
    assert!(route["emotion"].is_string());
    let probs = json(&ok(
        dir,
        &[
            &cfg[..],
            &[
                "classify",
                "--anp",
                "cute dog",
                "--caption",
                "a dog that feels playful and funny",
            ],
        ]
        .concat(),
    ));
    let total: f64 = probs["probabilities"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);

    let exported = json(&ok(
        dir,
        &[
            &cfg[..],
            &["export-features", "--split", "test", "--out", "features.tsv"],
        ]
        .concat(),
    ));
    let text = std::fs::read_to_string(dir.join("features.tsv")).unwrap();
    assert_eq!(text.lines().count() as u64, exported["rows"].as_u64().unwrap() + 1);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(emocap(dir, &["--help"]).status.code(), Some(0));
    assert_eq!(emocap(dir, &["no-such-verb"]).status.code(), Some(1));
    assert_eq!(emocap(dir, &["filter"]).status.code(), Some(1));

    ok(dir, &["synth", "--nouns", "2", "--images", "6", "--out", "small"]);
    // The classifier checkpoint has not been trained yet.
    let missing = emocap(
        dir,
        &[
            "--config",
            "small/pipeline.toml",
            "classify",
            "--anp",
            "cute dog",
            "--caption",
            "x",
        ],
    );
    assert_eq!(missing.status.code(), Some(2));
    assert!(!missing.stderr.is_empty());
    let bad_anp = emocap(
        dir,
        &[
            "--config",
            "small/pipeline.toml",
            "classify",
            "--anp",
            "dog",
            "--caption",
            "x",
        ],
    );
    assert_eq!(bad_anp.status.code(), Some(1));
    let bad_config = emocap(dir, &["--config", "nowhere.toml", "route", "--image", "x.png"]);
    assert_eq!(bad_config.status.code(), Some(2));
}
