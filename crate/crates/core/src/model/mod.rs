//! The multi-task network: a small conv backbone shared by a dense box head
//! (three localized conditions) and a pooled classification head (two
//! image-level conditions), with optional fusion of prior inputs.

mod decode;
mod loss;
pub(crate) mod network;
mod params;
mod train;

pub use decode::{decode_boxes, non_max_suppression};
pub use loss::{loss, LossBreakdown, LossConfig, RawPrediction};
pub use params::{
    ArchConfig, Checkpoint, Dense, Fusion, Head, ModelParams, ParamGroup, Variant,
    BOX_CHANNELS, BOX_FIELDS, CHECKPOINT_SCHEMA_VERSION, CLASS_OUTPUTS,
};
pub use train::{
    evaluate_loss, fine_tune_enhanced, loss_gradient, train, train_from, EpochRecord, LrSchedule,
    TrainConfig, TrainOutcome, TrainingLog,
};

use serde::{Deserialize, Serialize};

use crate::condition::{image_score_from_boxes, BoundingBox, ConditionKind};
use crate::dataset::Sample;
use crate::error::Result;
use crate::imaging::OralImage;
use crate::prior::PriorProfile;

/// Inference-mode forward pass. The baseline ignores `profile`; the enhanced
/// model treats `None` as an all-zero prior.
pub fn forward(params: &ModelParams, image: &OralImage, profile: Option<&PriorProfile>) -> Result<RawPrediction> {
    let (logits, _) = network::forward_trace(params, image, profile)?;
    Ok(RawPrediction::from_logits(&logits, params.arch.grid()))
}

/// Decoding settings shared by evaluation and the service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub conf_floor: f64,
    pub nms_iou: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            conf_floor: 0.05,
            nms_iou: 0.4,
        }
    }
}

/// Per-image output: decoded boxes plus one score per condition
/// (indexed by [`ConditionKind::index`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub boxes: Vec<BoundingBox>,
    pub scores: [f64; 5],
    pub raw: RawPrediction,
}

impl Detection {
    pub fn from_raw(raw: RawPrediction, decode: &DecodeConfig) -> Result<Self> {
        let boxes = decode_boxes(&raw, decode.conf_floor, decode.nms_iou);
        // the image score is the best box, which NMS never removes; decode
        // without a floor so weak images still get a graded score
        let all = decode_boxes(&raw, 0.0, 1.0);
        let mut scores = [0.0; 5];
        for c in ConditionKind::LOCALIZED {
            let own: Vec<_> = all.iter().filter(|b| b.condition == c).copied().collect();
            scores[c.index()] = image_score_from_boxes(&own, c)?;
        }
        for c in ConditionKind::IMAGE_LEVEL {
            scores[c.index()] = raw.class_scores.get(c)?;
        }
        Ok(Detection { boxes, scores, raw })
    }

    pub fn boxes_for(&self, condition: ConditionKind) -> Vec<BoundingBox> {
        self.boxes
            .iter()
            .filter(|b| b.condition == condition)
            .copied()
            .collect()
    }
}

pub fn detect(
    params: &ModelParams,
    image: &OralImage,
    profile: Option<&PriorProfile>,
    decode: &DecodeConfig,
) -> Result<Detection> {
    Detection::from_raw(forward(params, image, profile)?, decode)
}

/// Run the detector over a sample set, using each sample's priors.
pub fn detect_samples(params: &ModelParams, samples: &[Sample], decode: &DecodeConfig) -> Result<Vec<Detection>> {
    samples
        .iter()
        .map(|s| detect(params, &s.image, s.priors.as_ref(), decode))
        .collect()
}
