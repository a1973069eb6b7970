use serde::{Deserialize, Serialize};

use crate::condition::BoundingBox;

/// When a predicted box may claim a ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MatchCriterion {
    /// The predicted center lies inside the truth box.
    #[default]
    CenterContainment,
    /// Intersection over union strictly above the given value.
    Iou { min_iou: f64 },
}

impl MatchCriterion {
    fn accepts(self, predicted: &BoundingBox, truth: &BoundingBox) -> bool {
        match self {
            MatchCriterion::CenterContainment => truth.contains(predicted.cx, predicted.cy),
            MatchCriterion::Iou { min_iou } => predicted.iou(truth) > min_iou,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchResult {
    /// For each predicted box (input order), the truth index it claimed.
    pub claimed: Vec<Option<usize>>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn unclaimed_truths(&self, truth_count: usize) -> Vec<usize> {
        let mut hit = vec![false; truth_count];
        for t in self.claimed.iter().flatten() {
            hit[*t] = true;
        }
        (0..truth_count).filter(|&i| !hit[i]).collect()
    }
}

/// Greedy matching of one image's boxes for one condition. Predictions are
/// visited by descending confidence (stable on input order); each claims the
/// lowest-index unclaimed truth it is accepted by.
pub fn match_boxes(
    predicted: &[BoundingBox],
    truth: &[BoundingBox],
    criterion: MatchCriterion,
) -> MatchResult {
    let mut order: Vec<usize> = (0..predicted.len()).collect();
    order.sort_by(|&a, &b| predicted[b].confidence.total_cmp(&predicted[a].confidence));
    let mut taken = vec![false; truth.len()];
    let mut claimed = vec![None; predicted.len()];
    for i in order {
        let found = (0..truth.len()).find(|&t| !taken[t] && criterion.accepts(&predicted[i], &truth[t]));
        if let Some(t) = found {
            taken[t] = true;
            claimed[i] = Some(t);
        }
    }
    let tp = claimed.iter().filter(|c| c.is_some()).count();
    MatchResult {
        claimed,
        true_positives: tp,
        false_positives: predicted.len() - tp,
        false_negatives: truth.len() - tp,
    }
}
