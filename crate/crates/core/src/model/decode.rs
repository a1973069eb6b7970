use std::cmp::Ordering;

use super::loss::RawPrediction;
use crate::condition::{BoundingBox, ConditionKind};

/// Descending confidence, then position, so results do not depend on the
/// order boxes were produced in.
pub(crate) fn canonical_order(a: &BoundingBox, b: &BoundingBox) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.condition.cmp(&b.condition))
        .then(a.cx.total_cmp(&b.cx))
        .then(a.cy.total_cmp(&b.cy))
        .then(a.w.total_cmp(&b.w))
        .then(a.h.total_cmp(&b.h))
}

/// Greedy per-condition non-maximum suppression. Input need not be sorted.
pub fn non_max_suppression(mut boxes: Vec<BoundingBox>, nms_iou: f64) -> Vec<BoundingBox> {
    boxes.sort_by(canonical_order);
    let mut kept: Vec<BoundingBox> = Vec::with_capacity(boxes.len());
    for b in boxes {
        let suppressed = kept
            .iter()
            .any(|k| k.condition == b.condition && k.iou(&b) > nms_iou);
        if !suppressed {
            kept.push(b);
        }
    }
    kept
}

/// Convert grid activations to boxes: drop confidences below `conf_floor`,
/// suppress overlaps above `nms_iou` per condition, sort by confidence.
pub fn decode_boxes(raw: &RawPrediction, conf_floor: f64, nms_iou: f64) -> Vec<BoundingBox> {
    let g = raw.grid as f64;
    let mut boxes = Vec::new();
    for (k, &condition) in ConditionKind::LOCALIZED.iter().enumerate() {
        for r in 0..raw.grid {
            for c in 0..raw.grid {
                let v = |f: usize| raw.boxes[[k, r, c, f]];
                let confidence = v(4);
                if confidence < conf_floor {
                    continue;
                }
                boxes.push(BoundingBox {
                    cx: ((c as f64 + v(0)) / g).clamp(0.0, 1.0),
                    cy: ((r as f64 + v(1)) / g).clamp(0.0, 1.0),
                    w: v(2).clamp(0.0, 1.0),
                    h: v(3).clamp(0.0, 1.0),
                    confidence: confidence.clamp(0.0, 1.0),
                    condition,
                });
            }
        }
    }
    non_max_suppression(boxes, nms_iou)
}
