use std::sync::Arc;

use chrono::{DateTime, Utc};
use oralscan_core::explain::{grad_cam, Heatmap};
use oralscan_core::model::{decode_boxes, forward, DecodeConfig, ModelParams, RawPrediction, Variant};
use oralscan_core::prior::rasterize_strokes;
use oralscan_core::{
    image_score_from_boxes, level_for_score, BoundingBox, ConditionKind, ConfidenceLevel, OperatingPointTable,
    OralImage, PriorProfile, QuestionnaireSchema, TaskForm,
};
use serde::{Deserialize, Serialize};

use crate::catalog::SuggestionCatalog;
use crate::error::{ServiceError, ServiceResult};
use crate::session::ExamSession;
use crate::store::SessionStore;

/// Everything analysis needs besides the session itself. Loaded once and
/// shared read-only.
#[derive(Debug, Clone)]
pub struct Models {
    pub baseline: Option<Arc<ModelParams>>,
    pub enhanced: Option<Arc<ModelParams>>,
    pub table: OperatingPointTable,
    pub decode: DecodeConfig,
}

impl Models {
    pub fn input_size(&self) -> Option<usize> {
        self.baseline
            .as_ref()
            .or(self.enhanced.as_ref())
            .map(|p| p.arch.input_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRef {
    pub url: String,
    pub sidecar_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: ConditionKind,
    pub task_form: TaskForm,
    pub level: ConfidenceLevel,
    pub score: f64,
    /// Localized conditions only: boxes at or above the "likely" threshold,
    /// in crop-frame fractional coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<Vec<BoundingBox>>,
    /// Image-level conditions at "likely" or above only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<HeatmapRef>,
    pub description: String,
    pub typical_appearance: Vec<String>,
    pub suggestions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_id: String,
    pub model_variant: Variant,
    pub conditions: Vec<ConditionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamReport {
    pub session_id: String,
    pub analyzed_at: DateTime<Utc>,
    pub notice: String,
    pub images: Vec<ImageReport>,
}

fn describe(condition: ConditionKind, level: ConfidenceLevel, catalog: &SuggestionCatalog) -> String {
    let title = &catalog.get(condition).title;
    let phrase = match level {
        ConfidenceLevel::VeryLikely => "very likely present",
        ConfidenceLevel::Likely => "likely present",
        ConfidenceLevel::Unlikely => "unlikely",
    };
    format!("{title}: {phrase}. {}", catalog.get(condition).background)
}

fn pick_model<'a>(
    models: &'a Models,
    answers: Option<&Vec<usize>>,
) -> ServiceResult<(&'a Arc<ModelParams>, bool)> {
    match (answers, &models.enhanced, &models.baseline) {
        (Some(_), Some(enh), _) => Ok((enh, true)),
        (_, _, Some(base)) => Ok((base, false)),
        _ => Err(ServiceError::Config(
            "no baseline checkpoint loaded, and the enhanced model needs a complete questionnaire".into(),
        )),
    }
}

/// Run the model over every image of a collecting session and build the
/// report. Heatmaps are written to the session's artifact directory.
pub fn analyze_session(
    session: &ExamSession,
    store: &SessionStore,
    models: &Models,
    catalog: &SuggestionCatalog,
    schema: &QuestionnaireSchema,
    brush_radius: f64,
    now: DateTime<Utc>,
) -> ServiceResult<ExamReport> {
    if session.images.is_empty() {
        return Err(ServiceError::Precondition("analyze needs at least one uploaded image".into()));
    }
    let answers = session.complete_answers(schema);
    let (params, enhanced) = pick_model(models, answers.as_ref())?;
    let size = params.arch.input_size;
    let mut images = Vec::with_capacity(session.images.len());
    for record in &session.images {
        let crop = store.load_crop(&session.session_id, &record.image_id)?;
        let profile = if enhanced {
            let mask = rasterize_strokes(&record.strokes, size, size, brush_radius)?;
            Some(PriorProfile::new(answers.clone().unwrap_or_default(), mask, &params.questionnaire)?)
        } else {
            None
        };
        let mut conditions = Vec::with_capacity(ConditionKind::ALL.len());
        for (mut report, heatmap) in assess_image(params, &crop, profile.as_ref(), models, catalog)? {
            if let Some(h) = heatmap {
                let stem = format!("{}_{}", record.image_id, report.condition.as_str());
                h.save(&store.artifact_path(&session.session_id, &format!("{stem}.png"))?)?;
                let base = format!("/sessions/{}/artifacts", session.session_id);
                report.heatmap = Some(HeatmapRef {
                    url: format!("{base}/{stem}.png"),
                    sidecar_url: format!("{base}/{stem}.json"),
                });
            }
            conditions.push(report);
        }
        images.push(ImageReport {
            image_id: record.image_id.clone(),
            model_variant: params.variant,
            conditions,
        });
    }
    Ok(ExamReport {
        session_id: session.session_id.clone(),
        analyzed_at: now,
        notice: catalog.notice.clone(),
        images,
    })
}

/// Score one cropped image. Image-level conditions at "likely" or above come
/// with their Grad-CAM map; the caller decides where it is stored and fills
/// in [`ConditionReport::heatmap`].
pub fn assess_image(
    params: &ModelParams,
    crop: &OralImage,
    profile: Option<&PriorProfile>,
    models: &Models,
    catalog: &SuggestionCatalog,
) -> ServiceResult<Vec<(ConditionReport, Option<Heatmap>)>> {
    let raw = forward(params, crop, profile)?;
    let mut out = Vec::with_capacity(ConditionKind::ALL.len());
    for c in ConditionKind::ALL {
        let (score, boxes) = if c.is_localized() {
            let (score, boxes) = localized(&raw, c, models)?;
            (score, Some(boxes))
        } else {
            (raw.class_scores.get(c)?, None)
        };
        let level = level_for_score(score, c, &models.table);
        let heatmap = if !c.is_localized() && level >= ConfidenceLevel::Likely {
            Some(grad_cam(params, crop, profile, c)?)
        } else {
            None
        };
        let entry = catalog.get(c);
        let report = ConditionReport {
            condition: c,
            task_form: c.task_form(),
            level,
            score,
            boxes,
            heatmap: None,
            description: describe(c, level, catalog),
            typical_appearance: entry.typical_appearance.clone(),
            suggestions: if level >= ConfidenceLevel::Likely {
                entry.actions.clone()
            } else {
                Vec::new()
            },
        };
        out.push((report, heatmap));
    }
    Ok(out)
}

/// Image score from all cells, and the boxes worth showing: those at or
/// above the "likely" threshold, never fewer than the best one when the
/// condition reaches that level.
fn localized(raw: &RawPrediction, c: ConditionKind, models: &Models) -> ServiceResult<(f64, Vec<BoundingBox>)> {
    let own = |bs: Vec<BoundingBox>| -> Vec<BoundingBox> { bs.into_iter().filter(|b| b.condition == c).collect() };
    let all = own(decode_boxes(raw, 0.0, 1.0));
    let score = image_score_from_boxes(&all, c)?;
    let t2 = models.table.get(c).t2;
    let floor = models.decode.conf_floor.max(t2);
    let mut shown = own(decode_boxes(raw, floor, models.decode.nms_iou));
    if shown.is_empty() && score >= t2 {
        shown.extend(all.first().copied());
    }
    Ok((score, shown))
}
