use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use emocap::anp_detector::{predict_topk_anps, train_detector, DetectorCheckpoint, DetectorSample};
use emocap::captioning::caption_image;
use emocap::classifier::{classify, train_classifier, ClassifierCheckpoint};
use emocap::dataset::{read_jsonl, write_jsonl, DatasetSplit, ImageRecord, PixelSource};
use emocap::encoders::filter_dataset;
use emocap::harness::{
    classifier_examples, evaluate, export_features, load_split, run_pipeline, synth_dataset, HarnessError, Pipeline,
    PipelineConfig, SynthSpec,
};
use emocap::labels::{build_hierarchy, Anp};
use emocap::nn::argmax;
use emocap::preprocess::preprocess_image;
use emocap::routing::{decide_route, detect_embedded_text, zero_shot_text_emotion, Route};

use crate::{Cli, CliError, Command, SplitName};

struct Context {
    config: PipelineConfig,
    out: Option<PathBuf>,
}

impl Context {
    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.config.seed)
    }

    fn dataset(&self, data: Option<PathBuf>) -> Result<(PathBuf, Vec<ImageRecord>), CliError> {
        let path = data
            .or_else(|| self.config.data.dataset.clone())
            .ok_or_else(|| CliError::Usage("no dataset: pass --data or set data.dataset in the config".into()))?;
        let records = read_jsonl(&path)?;
        Ok((path, records))
    }

    fn out(&self, what: &str) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("--out is required for {what}")))
    }

    fn checkpoint(
        &self,
        given: Option<PathBuf>,
        configured: &Option<PathBuf>,
        what: &str,
    ) -> Result<PathBuf, CliError> {
        given
            .or_else(|| configured.clone())
            .ok_or_else(|| CliError::Usage(format!("no {what} checkpoint: pass --ckpt or set it in the config")))
    }

    /// Writes to `--out`, or prints when it is absent.
    fn emit(&self, text: &str) -> Result<(), CliError> {
        match &self.out {
            Some(p) => write_file(p, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Harness(HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("output serializes") + "\n"
}

fn image_record(path: &Path) -> ImageRecord {
    let id = path
        .file_stem()
        .map_or_else(|| "image".to_string(), |s| s.to_string_lossy().into_owned());
    ImageRecord::from_path(id, path)
}

fn select(records: &[ImageRecord], split: &DatasetSplit, which: SplitName) -> Vec<ImageRecord> {
    let ids = match which {
        SplitName::Train => &split.train,
        SplitName::Validation => &split.validation,
        SplitName::Test => &split.test,
        SplitName::All => return records.to_vec(),
    };
    DatasetSplit::select(records, ids).into_iter().cloned().collect()
}

/// Rewrites image paths so they stay valid when the records are written next
/// to `out`: relative to its directory when possible, absolute otherwise.
fn relocate(records: &[ImageRecord], out: &Path) -> Vec<ImageRecord> {
    let base = std::path::absolute(out.parent().unwrap_or(Path::new("."))).unwrap_or_default();
    records
        .iter()
        .map(|r| {
            let source = match &r.source {
                PixelSource::Path(p) => {
                    let abs = std::path::absolute(p).unwrap_or_else(|_| p.clone());
                    PixelSource::Path(abs.strip_prefix(&base).map(Path::to_path_buf).unwrap_or(abs))
                }
                other => other.clone(),
            };
            ImageRecord { source, ..r.clone() }
        })
        .collect()
}

pub(crate) fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = Context { config, out: cli.out };
    match cli.command {
        Command::Filter { data, threshold } => filter(&ctx, data.data, threshold),
        Command::TrainDetector { data } => train_detector_cmd(&ctx, data.data),
        Command::PredictAnps { ckpt, image, k } => predict_anps(&ctx, ckpt, &image, k),
        Command::Caption { image, k } => caption(&ctx, &image, k),
        Command::Route { image } => route(&ctx, &image),
        Command::TrainClassifier { data } => train_classifier_cmd(&ctx, data.data),
        Command::Classify { ckpt, anp, caption } => classify_cmd(&ctx, ckpt, &anp, &caption),
        Command::Run { image, data, split } => run(&ctx, image, data, split),
        Command::Eval { data, split, traces } => eval(&ctx, data.data, split, traces),
        Command::ExportFeatures { data, ckpt, split } => export(&ctx, data.data, ckpt, split),
        Command::Synth {
            nouns,
            adjectives,
            images,
            classes,
            separability,
            text_fraction,
            noise_fraction,
        } => {
            let spec = SynthSpec {
                nouns,
                adjectives_per_noun: adjectives,
                images_per_anp: images,
                classes,
                separability: separability.into(),
                text_fraction,
                noise_fraction,
                ..SynthSpec::default()
            };
            let dir = ctx.out("synth")?;
            let paths = synth_dataset(&spec, ctx.config.seed)?.write(dir)?;
            println!(
                "{}",
                json!({"records": images * nouns * adjectives, "dataset": paths.dataset, "config": paths.config})
            );
            Ok(())
        }
    }
}

fn filter(ctx: &Context, data: Option<PathBuf>, threshold: Option<f64>) -> Result<(), CliError> {
    let (_, records) = ctx.dataset(data)?;
    let encoder = ctx
        .config
        .encoder
        .as_ref()
        .ok_or_else(|| CliError::Usage("filter needs an [encoder] section in the config".into()))?
        .build()?;
    let threshold = threshold.unwrap_or(ctx.config.loss.anp_threshold);
    let out = ctx.out("filter")?;
    let outcome = filter_dataset(&records, encoder.as_ref(), threshold)?;
    write_jsonl(out, &relocate(&outcome.retained, out))?;
    let removed: Vec<&str> = outcome.removed.iter().map(|r| r.id.as_str()).collect();
    println!(
        "{}",
        json!({"threshold": threshold, "total": records.len(), "retained": outcome.retained.len(), "removed": removed})
    );
    Ok(())
}

fn train_detector_cmd(ctx: &Context, data: Option<PathBuf>) -> Result<(), CliError> {
    let (_, records) = ctx.dataset(data)?;
    let split = load_split(&records, &ctx.config)?;
    let cfg = ctx.config.detector_config();
    let mut rng = ctx.rng();
    let train = DetectorSample::prepare(&select(&records, &split, SplitName::Train), cfg.grid, true, &mut rng)?;
    let validation = DetectorSample::prepare(
        &select(&records, &split, SplitName::Validation),
        cfg.grid,
        false,
        &mut rng,
    )?;
    let hierarchy = build_hierarchy(train.iter().map(|s| &s.anp)).map_err(|e| CliError::Usage(e.to_string()))?;
    let trained = train_detector(&train, &validation, &hierarchy, &cfg, &mut rng)?;
    let out = ctx
        .out
        .clone()
        .or_else(|| ctx.config.detector_checkpoint.clone())
        .ok_or_else(|| CliError::Usage("pass --out or set detector_checkpoint".into()))?;
    let losses = trained.log.losses();
    DetectorCheckpoint {
        config: cfg,
        model: trained.model,
        log: trained.log,
    }
    .save(&out)?;
    println!(
        "{}",
        json!({
            "checkpoint": out,
            "train": train.len(),
            "validation": validation.len(),
            "best_epoch": trained.best_epoch,
            "initial_loss": losses.first(),
            "final_loss": losses.last(),
        })
    );
    Ok(())
}

fn predict_anps(ctx: &Context, ckpt: Option<PathBuf>, image: &Path, k: Option<usize>) -> Result<(), CliError> {
    let path = ctx.checkpoint(ckpt, &ctx.config.detector_checkpoint, "detector")?;
    let model = DetectorCheckpoint::load(&path)?.model;
    let pixels = preprocess_image(&image_record(image), false, &mut ctx.rng())?;
    let prediction = predict_topk_anps(&model, &pixels, k.unwrap_or(ctx.config.loss.k_concepts))?;
    ctx.emit(&pretty(&prediction))
}

fn caption(ctx: &Context, image: &Path, k: Option<usize>) -> Result<(), CliError> {
    let chat = ctx.config.chat.build()?;
    let encoder = ctx.config.encoder.as_ref().map(|e| e.build()).transpose()?;
    let record = image_record(image);
    let (caption, chains) = caption_image(
        chat.as_ref(),
        &record,
        &ctx.config.taxonomy()?,
        k.unwrap_or(ctx.config.loss.k_chains),
        ctx.config.captioning.similarity,
        ctx.config.captioning.merge_threshold,
        encoder.as_deref(),
    )?;
    ctx.emit(&pretty(&json!({"id": record.id, "caption": caption, "chains": chains})))
}

fn route(ctx: &Context, image: &Path) -> Result<(), CliError> {
    let record = image_record(image);
    let ocr = detect_embedded_text(&record, ctx.config.ocr.build()?.as_ref())?;
    let decision = decide_route(&ocr, ctx.config.routing.min_chars, ctx.config.routing.min_confidence);
    let emotion = if decision.route == Route::TextPath {
        let taxonomy = ctx.config.taxonomy()?;
        let c = zero_shot_text_emotion(ctx.config.chat.build()?.as_ref(), &ocr.text, &taxonomy)?;
        Some(taxonomy.class_name(c).unwrap_or_default().to_string())
    } else {
        None
    };
    ctx.emit(&pretty(
        &json!({"id": record.id, "decision": decision, "ocr": ocr, "emotion": emotion}),
    ))
}

fn train_classifier_cmd(ctx: &Context, data: Option<PathBuf>) -> Result<(), CliError> {
    let (_, records) = ctx.dataset(data)?;
    let split = load_split(&records, &ctx.config)?;
    let taxonomy = ctx.config.taxonomy()?;
    let ocr = ctx.config.ocr.build()?;
    let text_filter = ctx
        .config
        .exclude_text_path
        .then_some((ocr.as_ref(), &ctx.config.routing));
    let (train, excluded) = classifier_examples(&select(&records, &split, SplitName::Train), text_filter)?;
    let (validation, _) = classifier_examples(&select(&records, &split, SplitName::Validation), None)?;
    let cfg = ctx.config.classifier_config();
    let trained = train_classifier(&train, &validation, &taxonomy, &cfg, &mut ctx.rng())?;
    let out = ctx
        .out
        .clone()
        .or_else(|| ctx.config.classifier_checkpoint.clone())
        .ok_or_else(|| CliError::Usage("pass --out or set classifier_checkpoint".into()))?;
    let best = trained.log.epochs.get(trained.best_epoch.saturating_sub(1)).cloned();
    ClassifierCheckpoint {
        config: cfg,
        model: trained.model,
        log: trained.log,
    }
    .save(&out)?;
    println!(
        "{}",
        json!({
            "checkpoint": out,
            "train": train.len(),
            "excluded_text_path": excluded.len(),
            "validation": validation.len(),
            "best_epoch": trained.best_epoch,
            "validation_accuracy": best.and_then(|e| e.validation_accuracy),
        })
    );
    Ok(())
}

fn classify_cmd(ctx: &Context, ckpt: Option<PathBuf>, anp: &str, caption: &str) -> Result<(), CliError> {
    let anp: Anp = anp.parse().map_err(|e| CliError::Usage(format!("--anp: {e}")))?;
    let path = ctx.checkpoint(ckpt, &ctx.config.classifier_checkpoint, "classifier")?;
    let model = ClassifierCheckpoint::load(&path)?.model;
    let taxonomy = ctx.config.taxonomy()?;
    let probs = classify(&model, &anp, caption, &taxonomy)?;
    let by_class: serde_json::Map<String, serde_json::Value> = taxonomy
        .classes()
        .iter()
        .cloned()
        .zip(probs.iter().map(|&p| json!(p)))
        .collect();
    let c = argmax(&probs);
    ctx.emit(&pretty(&json!({
        "predicted": taxonomy.class_name(c),
        "predicted_index": c,
        "probabilities": by_class,
    })))
}

fn run(ctx: &Context, image: Option<PathBuf>, data: Option<PathBuf>, split: SplitName) -> Result<(), CliError> {
    let pipeline = Pipeline::from_config(&ctx.config)?;
    let records = match image {
        Some(p) => vec![image_record(&p)],
        None => {
            let (_, records) = ctx.dataset(data)?;
            let s = load_split(&records, &ctx.config)?;
            select(&records, &s, split)
        }
    };
    let mut text = String::new();
    for r in &records {
        let (_, trace) = run_pipeline(r, &pipeline).map_err(HarnessError::from)?;
        text.push_str(&serde_json::to_string(&trace).expect("trace serializes"));
        text.push('\n');
    }
    ctx.emit(&text)
}

fn eval(ctx: &Context, data: Option<PathBuf>, split: SplitName, traces: Option<PathBuf>) -> Result<(), CliError> {
    let pipeline = Pipeline::from_config(&ctx.config)?;
    let (_, records) = ctx.dataset(data)?;
    let s = load_split(&records, &ctx.config)?;
    let (report, trace_list) = evaluate(&select(&records, &s, split), &pipeline)?;
    if let Some(p) = traces {
        let text: String = trace_list
            .iter()
            .map(|t| serde_json::to_string(t).expect("trace serializes") + "\n")
            .collect();
        write_file(&p, &text)?;
    }
    ctx.emit(&pretty(&report))
}

fn export(ctx: &Context, data: Option<PathBuf>, ckpt: Option<PathBuf>, split: SplitName) -> Result<(), CliError> {
    let path = ctx.checkpoint(ckpt, &ctx.config.classifier_checkpoint, "classifier")?;
    let model = ClassifierCheckpoint::load(&path)?.model;
    let (_, records) = ctx.dataset(data)?;
    let s = load_split(&records, &ctx.config)?;
    let out = ctx.out("export-features")?;
    let rows = export_features(&select(&records, &s, split), &model, out)?;
    println!("{}", json!({"rows": rows, "out": out}));
    Ok(())
}
