//! Synthetic oral-exam samples, their on-disk format, person-disjoint
//! splitting and training-time augmentation.

mod augment;
mod split;
mod store;
mod synth;

pub use augment::{augment, AugmentConfig};
pub use split::split;
pub use store::{load_dataset, save_dataset, DATASET_SCHEMA_VERSION};
pub use synth::{generate, PatternStyle, RegionPlacement, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::condition::{BoundingBox, ClassScores, ConditionKind};
use crate::error::{Error, Result};
use crate::imaging::{FracRect, OralImage};
use crate::prior::PriorProfile;

/// Ground-truth flags for the two image-level conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImageLabels {
    pub soft_deposit: bool,
    pub discoloration: bool,
}

impl ImageLabels {
    pub fn get(&self, condition: ConditionKind) -> bool {
        match condition {
            ConditionKind::SoftDeposit => self.soft_deposit,
            ConditionKind::Discoloration => self.discoloration,
            _ => false,
        }
    }

    pub fn set(&mut self, condition: ConditionKind, value: bool) {
        match condition {
            ConditionKind::SoftDeposit => self.soft_deposit = value,
            ConditionKind::Discoloration => self.discoloration = value,
            _ => {}
        }
    }

    pub fn as_scores(&self) -> ClassScores {
        ClassScores::from_array([
            self.soft_deposit as u8 as f64,
            self.discoloration as u8 as f64,
        ])
    }
}

/// Where an image-level condition was painted. Only used to score heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedRegion {
    pub condition: ConditionKind,
    pub rect: FracRect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: OralImage,
    /// Ground-truth boxes; confidence is always 1.
    pub boxes: Vec<BoundingBox>,
    pub labels: ImageLabels,
    pub regions: Vec<PlantedRegion>,
    pub priors: Option<PriorProfile>,
    pub person_id: String,
}

impl Sample {
    /// Whether the sample is positive for a condition (any box, or the flag).
    pub fn has(&self, condition: ConditionKind) -> bool {
        if condition.is_localized() {
            self.boxes.iter().any(|b| b.condition == condition)
        } else {
            self.labels.get(condition)
        }
    }

    pub fn boxes_for(&self, condition: ConditionKind) -> Vec<BoundingBox> {
        self.boxes
            .iter()
            .filter(|b| b.condition == condition)
            .copied()
            .collect()
    }

    pub fn region_for(&self, condition: ConditionKind) -> Option<FracRect> {
        self.regions
            .iter()
            .find(|r| r.condition == condition)
            .map(|r| r.rect)
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.boxes {
            b.validate()?;
        }
        for r in &self.regions {
            r.condition.require_image_level()?;
        }
        if self.person_id.is_empty() {
            return Err(Error::Validation {
                field: "person_id".into(),
                message: format!("sample {} has no person id", self.id),
            });
        }
        Ok(())
    }
}
