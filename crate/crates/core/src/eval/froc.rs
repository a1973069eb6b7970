use serde::{Deserialize, Serialize};

use super::matching::{match_boxes, MatchCriterion};
use crate::condition::{BoundingBox, ConditionKind};
use crate::error::{Error, Result};

/// Predictions and ground truth for one image. Boxes of different conditions
/// are matched separately.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageBoxes {
    pub predicted: Vec<BoundingBox>,
    pub truth: Vec<BoundingBox>,
}

impl ImageBoxes {
    pub fn new(predicted: Vec<BoundingBox>, truth: Vec<BoundingBox>) -> Self {
        ImageBoxes { predicted, truth }
    }

    /// Keep only boxes of one condition.
    pub fn only(&self, condition: ConditionKind) -> Self {
        ImageBoxes {
            predicted: self.predicted.iter().filter(|b| b.condition == condition).copied().collect(),
            truth: self.truth.iter().filter(|b| b.condition == condition).copied().collect(),
        }
    }
}

/// Box-wise sensitivity against false positive boxes per image. Thresholds
/// ascend; a prediction survives when its confidence is at or above the
/// threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocCurve {
    pub thresholds: Vec<f64>,
    pub box_sensitivity: Vec<f64>,
    pub false_positives_per_image: Vec<f64>,
    pub truth_boxes: usize,
    pub images: usize,
}

#[derive(Default, Clone, Copy)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn count_at(image: &ImageBoxes, threshold: f64, criterion: MatchCriterion) -> Counts {
    let mut conditions: Vec<ConditionKind> = image
        .predicted
        .iter()
        .chain(&image.truth)
        .map(|b| b.condition)
        .collect();
    conditions.sort();
    conditions.dedup();
    let mut c = Counts::default();
    for cond in conditions {
        let preds: Vec<BoundingBox> = image
            .predicted
            .iter()
            .filter(|b| b.condition == cond && b.confidence >= threshold)
            .copied()
            .collect();
        let truth: Vec<BoundingBox> = image.truth.iter().filter(|b| b.condition == cond).copied().collect();
        let r = match_boxes(&preds, &truth, criterion);
        c.tp += r.true_positives;
        c.fp += r.false_positives;
        c.fn_ += r.false_negatives;
    }
    c
}

pub fn froc(images: &[ImageBoxes], criterion: MatchCriterion) -> Result<FrocCurve> {
    if images.is_empty() {
        return Err(Error::UndefinedMetric("FROC needs at least one image".into()));
    }
    let truth_boxes: usize = images.iter().map(|i| i.truth.len()).sum();
    if truth_boxes == 0 {
        return Err(Error::UndefinedMetric(
            "box sensitivity is undefined with zero ground-truth boxes".into(),
        ));
    }
    let mut thresholds: Vec<f64> = images
        .iter()
        .flat_map(|i| i.predicted.iter().map(|b| b.confidence))
        .chain([0.0, 1.0])
        .collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let n = images.len() as f64;
    let mut box_sensitivity = Vec::with_capacity(thresholds.len());
    let mut false_positives_per_image = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let mut total = Counts::default();
        for image in images {
            let c = count_at(image, t, criterion);
            total.tp += c.tp;
            total.fp += c.fp;
            total.fn_ += c.fn_;
        }
        box_sensitivity.push(total.tp as f64 / (total.tp + total.fn_) as f64);
        false_positives_per_image.push(total.fp as f64 / n);
    }
    Ok(FrocCurve {
        thresholds,
        box_sensitivity,
        false_positives_per_image,
        truth_boxes,
        images: images.len(),
    })
}

impl FrocCurve {
    /// Sensitivity and FP per image at an arbitrary threshold, read from the
    /// nearest curve threshold at or above it.
    pub fn at(&self, threshold: f64) -> (f64, f64) {
        match self.thresholds.iter().position(|&t| t >= threshold) {
            Some(i) => (self.box_sensitivity[i], self.false_positives_per_image[i]),
            None => (0.0, 0.0),
        }
    }
}
