use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use oralscan_core::dataset::{generate, load_dataset, save_dataset, split, Sample};
use oralscan_core::eval::{
    calibrate as calibrate_curves, evaluate, froc_csv, render_curves, roc_csv, short_name, Calibration, Evaluation,
    MetricSummary, PlotSeries,
};
use oralscan_core::model::{detect_samples, fine_tune_enhanced, train as train_model, Checkpoint, Variant};
use oralscan_core::prior::rasterize_strokes;
use oralscan_core::{crop_to_guide, ConditionKind, OperatingPointTable, OralImage, PriorProfile, Stroke};
use oralscan_service::api::guide_from_query;
use oralscan_service::{assess_image, AppState, ConditionReport, Models, ServiceConfig, SessionStore, SuggestionCatalog};

use crate::config::{RunConfig, Stage};
use crate::error::CliError;
use crate::manifest::{Manifest, Recorder};
use crate::overlay::{blend_heatmap, box_color, draw_box, upscale};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const OPERATING_POINTS_FILE: &str = "operating_points.json";
pub const SUMMARY_FILE: &str = "summary.json";

fn require(path: PathBuf, stage: Stage) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::missing_artifact(&path, stage.producer()))
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn split_dir(config: &RunConfig, name: &str) -> PathBuf {
    config.stage_dir(Stage::Data).join(name)
}

fn load_split(config: &RunConfig, name: &str, rec: &mut Recorder) -> Result<Vec<Sample>, CliError> {
    let annotations = require(split_dir(config, name).join("annotations.json"), Stage::Data)?;
    rec.input(&annotations)?;
    Ok(load_dataset(&split_dir(config, name))?)
}

fn load_checkpoint(config: &RunConfig, stage: Stage, rec: &mut Recorder) -> Result<Checkpoint, CliError> {
    let path = require(config.stage_dir(stage).join(CHECKPOINT_FILE), stage)?;
    rec.input(&path)?;
    Ok(Checkpoint::load(&path)?)
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(files_under(&p)?);
        } else {
            out.push(p);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSummary {
    pub train: usize,
    pub test: usize,
}

pub fn gen_data(config: &RunConfig) -> Result<DataSummary, CliError> {
    config.validate()?;
    let mut rec = Recorder::new("gen-data", config);
    let samples = generate(&config.data.synthetic, config.seed)?;
    let (train, test) = split(samples, config.data.train_fraction, config.seed)?;
    let dir = config.stage_dir(Stage::Data);
    for (name, set) in [("train", &train), ("test", &test)] {
        let d = dir.join(name);
        if d.exists() {
            fs::remove_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
        }
        save_dataset(&d, set)?;
        for f in files_under(&d)? {
            rec.output(&f)?;
        }
    }
    rec.finish(&dir)?;
    println!("gen-data: {} train / {} test samples in {}", train.len(), test.len(), dir.display());
    Ok(DataSummary {
        train: train.len(),
        test: test.len(),
    })
}

fn save_checkpoint(
    config: &RunConfig,
    stage: Stage,
    outcome: oralscan_core::model::TrainOutcome,
    seed: u64,
    mut rec: Recorder,
) -> Result<Checkpoint, CliError> {
    let dir = config.stage_dir(stage);
    create_dir(&dir)?;
    let mut ck = Checkpoint::new(outcome.params);
    ck.config_hash = Some(rec.hash().to_string());
    ck.seed = Some(seed);
    let ck_path = dir.join(CHECKPOINT_FILE);
    ck.save(&ck_path)?;
    rec.output(&ck_path)?;
    let log_path = dir.join("training_log.jsonl");
    outcome.log.save(&log_path)?;
    rec.output(&log_path)?;
    rec.finish(&dir)?;
    let best = outcome
        .log
        .best_epoch
        .and_then(|b| outcome.log.epochs.get(b))
        .and_then(|r| r.holdout_loss);
    println!(
        "{}: {} epochs, best epoch {:?} (holdout loss {}), checkpoint {}",
        stage.producer(),
        outcome.log.epochs.len(),
        outcome.log.best_epoch,
        best.map_or("n/a".into(), |l| format!("{l:.4}")),
        ck_path.display()
    );
    Ok(ck)
}

pub fn train(config: &RunConfig) -> Result<Checkpoint, CliError> {
    config.validate()?;
    let mut rec = Recorder::new("train", config);
    let train_set = load_split(config, "train", &mut rec)?;
    let holdout = load_split(config, "test", &mut rec)?;
    let outcome = train_model(
        &config.model,
        &config.data.synthetic.questionnaire,
        &train_set,
        &holdout,
        &config.train,
    )?;
    tracing::info!(best_epoch = ?outcome.log.best_epoch, "baseline training finished");
    save_checkpoint(config, Stage::Baseline, outcome, config.train.seed, rec)
}

pub fn finetune(config: &RunConfig) -> Result<Checkpoint, CliError> {
    config.validate()?;
    let mut rec = Recorder::new("finetune", config);
    let baseline = load_checkpoint(config, Stage::Baseline, &mut rec)?;
    let train_set = load_split(config, "train", &mut rec)?;
    let holdout = load_split(config, "test", &mut rec)?;
    let outcome = fine_tune_enhanced(
        &baseline.params,
        &config.data.synthetic.questionnaire,
        &train_set,
        &holdout,
        &config.finetune,
    )?;
    save_checkpoint(config, Stage::Enhanced, outcome, config.finetune.seed, rec)
}

fn evaluation_file(variant: Variant) -> String {
    format!("evaluation_{}.json", variant_name(variant))
}

fn variant_name(variant: Variant) -> &'static str {
    match variant {
        Variant::Baseline => "baseline",
        Variant::Enhanced => "enhanced",
    }
}

pub fn eval(config: &RunConfig) -> Result<MetricSummary, CliError> {
    config.validate()?;
    let mut rec = Recorder::new("eval", config);
    let baseline = load_checkpoint(config, Stage::Baseline, &mut rec)?;
    let enhanced_path = config.stage_dir(Stage::Enhanced).join(CHECKPOINT_FILE);
    let enhanced = if enhanced_path.exists() {
        Some(load_checkpoint(config, Stage::Enhanced, &mut rec)?)
    } else {
        None
    };
    let test = load_split(config, "test", &mut rec)?;
    let dir = config.stage_dir(Stage::Eval);
    create_dir(&dir)?;

    let mut evaluations: Vec<(Variant, Evaluation)> = Vec::new();
    for ck in std::iter::once(&baseline).chain(enhanced.as_ref()) {
        let detections = detect_samples(&ck.params, &test, &config.decode)?;
        evaluations.push((ck.variant, evaluate(&detections, &test, config.eval.criterion)?));
    }

    for (variant, ev) in &evaluations {
        let name = variant_name(*variant);
        let path = dir.join(evaluation_file(*variant));
        write(&path, serde_json::to_string(ev)?)?;
        rec.output(&path)?;
        for c in ConditionKind::ALL {
            let path = dir.join(format!("roc_{}_{name}.csv", short_name(c)));
            write(&path, roc_csv(&ev.roc[&c]))?;
            rec.output(&path)?;
        }
        for c in ConditionKind::LOCALIZED {
            let path = dir.join(format!("froc_{}_{name}.csv", short_name(c)));
            write(&path, froc_csv(&ev.froc[&c]))?;
            rec.output(&path)?;
        }
        let roc_series: Vec<PlotSeries> = ConditionKind::ALL
            .iter()
            .map(|c| {
                let r = &ev.roc[c];
                PlotSeries {
                    label: short_name(*c).into(),
                    points: r.false_positive_rate.iter().copied().zip(r.sensitivity.iter().copied()).collect(),
                }
            })
            .collect();
        let path = dir.join(format!("roc_{name}.png"));
        render_curves(&roc_series, 1.0, &path)?;
        rec.output(&path)?;
        let froc_series: Vec<PlotSeries> = ConditionKind::LOCALIZED
            .iter()
            .map(|c| {
                let f = &ev.froc[c];
                PlotSeries {
                    label: short_name(*c).into(),
                    points: f
                        .false_positives_per_image
                        .iter()
                        .copied()
                        .zip(f.box_sensitivity.iter().copied())
                        .collect(),
                }
            })
            .collect();
        let path = dir.join(format!("froc_{name}.png"));
        render_curves(&froc_series, 4.0, &path)?;
        rec.output(&path)?;
    }

    let labelled: Vec<(&str, &Evaluation)> = evaluations
        .iter()
        .map(|(v, e)| {
            let label = match v {
                Variant::Baseline => "Baseline",
                Variant::Enhanced => "Enhanced",
            };
            (label, e)
        })
        .collect();
    let mut summary = MetricSummary::new(&labelled);
    summary.config_hash = Some(rec.hash().to_string());
    let path = dir.join(SUMMARY_FILE);
    write(&path, serde_json::to_string_pretty(&summary)?)?;
    rec.output(&path)?;
    let table = summary.to_table();
    let path = dir.join("summary.txt");
    write(&path, &table)?;
    rec.output(&path)?;
    rec.finish(&dir)?;
    print!("{table}");
    Ok(summary)
}

pub fn calibrate(config: &RunConfig) -> Result<Calibration, CliError> {
    config.validate()?;
    let mut rec = Recorder::new("calibrate", config);
    let path = require(
        config.stage_dir(Stage::Eval).join(evaluation_file(Variant::Baseline)),
        Stage::Eval,
    )?;
    rec.input(&path)?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let evaluation: Evaluation = serde_json::from_str(&text)?;
    let mut calibration = calibrate_curves(&evaluation, config.calibration)?;
    calibration.table.config_hash = Some(rec.hash().to_string());

    let dir = config.stage_dir(Stage::Calibration);
    create_dir(&dir)?;
    let table_path = dir.join(OPERATING_POINTS_FILE);
    write(&table_path, serde_json::to_string_pretty(&calibration.table)?)?;
    rec.output(&table_path)?;
    let detail = dir.join("calibration.json");
    write(&detail, serde_json::to_string_pretty(&calibration)?)?;
    rec.output(&detail)?;
    rec.finish(&dir)?;

    println!("{:<22} {:>7} {:>7} {:>9} {:>9}", "condition", "t1", "t2", "sens(t1)", "sens(t2)");
    for (c, p) in &calibration.points {
        println!(
            "{:<22} {:>7.3} {:>7.3} {:>9.3} {:>9.3}",
            c.as_str(),
            p.pair.t1,
            p.pair.t2,
            p.sensitivity_t1,
            p.sensitivity_t2
        );
        for w in &p.warnings {
            tracing::warn!(condition = c.as_str(), "{w}");
        }
    }
    Ok(calibration)
}

/// Baseline and (when present) enhanced checkpoints plus the calibrated
/// operating-point table.
pub fn load_models(config: &RunConfig, rec: &mut Recorder) -> Result<Models, CliError> {
    let baseline = load_checkpoint(config, Stage::Baseline, rec)?;
    let enhanced_path = config.stage_dir(Stage::Enhanced).join(CHECKPOINT_FILE);
    let enhanced = if enhanced_path.exists() {
        Some(load_checkpoint(config, Stage::Enhanced, rec)?)
    } else {
        None
    };
    let table_path = require(
        config.stage_dir(Stage::Calibration).join(OPERATING_POINTS_FILE),
        Stage::Calibration,
    )?;
    rec.input(&table_path)?;
    let text = fs::read_to_string(&table_path).map_err(|e| CliError::io(&table_path, e))?;
    let table: OperatingPointTable = serde_json::from_str(&text)?;
    table.validate()?;
    Ok(Models {
        baseline: Some(Arc::new(baseline.params)),
        enhanced: enhanced.map(|c| Arc::new(c.params)),
        table,
        decode: config.decode,
    })
}

fn load_catalog(config: &RunConfig) -> Result<SuggestionCatalog, CliError> {
    match &config.serve.catalog {
        Some(path) => Ok(SuggestionCatalog::load(path)?),
        None => Ok(SuggestionCatalog::default()),
    }
}

#[derive(Debug, Clone, Default)]
pub struct InferRequest {
    pub images: Vec<PathBuf>,
    /// Complete questionnaire answers; selects the enhanced model.
    pub answers: Option<Vec<usize>>,
    /// JSON array of strokes, applied to every image.
    pub strokes: Option<PathBuf>,
    pub solid: Option<String>,
    pub dashed: Option<String>,
}

#[derive(Debug, Clone)]
pub struct InferResult {
    pub image: PathBuf,
    pub variant: Variant,
    pub conditions: Vec<ConditionReport>,
    pub overlays: Vec<PathBuf>,
}

pub fn infer(config: &RunConfig, request: &InferRequest) -> Result<Vec<InferResult>, CliError> {
    config.validate()?;
    if request.images.is_empty() {
        return Err(CliError::new("validation", "infer needs at least one --image"));
    }
    let mut rec = Recorder::new("infer", config);
    for img in &request.images {
        if !img.is_file() {
            return Err(CliError::new("io", format!("{} is not a readable file", img.display())));
        }
    }
    let models = load_models(config, &mut rec)?;
    let catalog = load_catalog(config)?;
    let mut query = HashMap::new();
    if let Some(s) = &request.solid {
        query.insert("solid".to_string(), s.clone());
    }
    if let Some(d) = &request.dashed {
        query.insert("dashed".to_string(), d.clone());
    }
    let guide = guide_from_query(&query)?;

    let (params, profile_answers) = match &request.answers {
        Some(answers) => {
            let enhanced = models.enhanced.as_ref().ok_or_else(|| {
                CliError::missing_artifact(&config.stage_dir(Stage::Enhanced).join(CHECKPOINT_FILE), "finetune")
            })?;
            enhanced.questionnaire.check_answers(answers)?;
            (enhanced.clone(), Some(answers.clone()))
        }
        None => (models.baseline.clone().expect("baseline loaded"), None),
    };
    let strokes: Vec<Stroke> = match &request.strokes {
        Some(p) => {
            rec.input(p)?;
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => Vec::new(),
    };
    let size = params.arch.input_size;
    let dir = config.stage_dir(Stage::Infer);
    create_dir(&dir)?;

    let mut results = Vec::new();
    for path in &request.images {
        rec.input(path)?;
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        let source = OralImage::decode(&bytes, stem.clone(), "cli")?;
        let crop = crop_to_guide(&source, &guide, size)?;
        let profile = match &profile_answers {
            Some(a) => {
                let mask = rasterize_strokes(&strokes, size, size, config.serve.brush_radius)?;
                Some(PriorProfile::new(a.clone(), mask, &params.questionnaire)?)
            }
            None => None,
        };
        let assessed = assess_image(&params, &crop, profile.as_ref(), &models, &catalog)?;

        let factor = (256 / size as u32).max(1);
        let base = upscale(&crop, factor);
        let mut boxed = base.clone();
        let mut overlays = Vec::new();
        let mut conditions = Vec::new();
        println!("{}:", path.display());
        for (report, heatmap) in assessed {
            println!(
                "  {:<22} {:<12} score {:.3}",
                report.condition.as_str(),
                report.level.as_str(),
                report.score
            );
            for b in report.boxes.iter().flatten() {
                draw_box(&mut boxed, b, box_color(b.condition), 2);
            }
            if let Some(h) = heatmap {
                let out = dir.join(format!("{stem}_{}_heatmap.png", report.condition.as_str()));
                blend_heatmap(&base, &h, 0.5)
                    .save(&out)
                    .map_err(|e| CliError::from(oralscan_core::Error::from(e)))?;
                rec.output(&out)?;
                overlays.push(out);
            }
            conditions.push(report);
        }
        let out = dir.join(format!("{stem}_boxes.png"));
        boxed.save(&out).map_err(|e| CliError::from(oralscan_core::Error::from(e)))?;
        rec.output(&out)?;
        overlays.insert(0, out);
        let report_path = dir.join(format!("{stem}_report.json"));
        let json = serde_json::json!({
            "image": path.display().to_string(),
            "model_variant": params.variant,
            "conditions": conditions,
        });
        write(&report_path, serde_json::to_string_pretty(&json)?)?;
        rec.output(&report_path)?;
        results.push(InferResult {
            image: path.clone(),
            variant: params.variant,
            conditions,
            overlays,
        });
    }
    rec.finish(&dir)?;
    Ok(results)
}

/// Build the service state from a run's artifacts.
pub fn service_state(config: &RunConfig) -> Result<(AppState, Manifest), CliError> {
    config.validate()?;
    let mut rec = Recorder::new("serve", config);
    let models = load_models(config, &mut rec)?;
    let catalog = load_catalog(config)?;
    let sessions = config.stage_dir(Stage::Sessions);
    let store = SessionStore::open(&sessions)?;
    let state = AppState::new(
        store,
        models,
        catalog,
        ServiceConfig {
            brush_radius: config.serve.brush_radius,
            max_upload_bytes: config.serve.max_upload_bytes,
        },
    )?;
    let manifest = rec.finish(&sessions)?;
    Ok((state, manifest))
}

pub fn serve(config: &RunConfig) -> Result<(), CliError> {
    let addr: std::net::SocketAddr = config
        .serve
        .addr
        .parse()
        .map_err(|e| CliError::config(format!("serve.addr {:?}: {e}", config.serve.addr)))?;
    let (state, _) = service_state(config)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new("io", format!("cannot start runtime: {e}")))?;
    println!("serving on http://{addr}");
    runtime
        .block_on(oralscan_service::serve(state, addr))
        .map_err(|e| CliError::new("io", format!("server on {addr}: {e}")))
}
