//! Condition taxonomy, per-condition scores and the confidence-to-level mapping.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a condition is detected: with bounding boxes or with an image-level score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskForm {
    Localized,
    ImageLevel,
}

impl TaskForm {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskForm::Localized => "localized",
            TaskForm::ImageLevel => "image_level",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    PeriodontalDisease,
    Caries,
    DentalCalculus,
    SoftDeposit,
    Discoloration,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 5] = [
        ConditionKind::PeriodontalDisease,
        ConditionKind::Caries,
        ConditionKind::DentalCalculus,
        ConditionKind::SoftDeposit,
        ConditionKind::Discoloration,
    ];

    /// Box-localized conditions, in box-head channel order.
    pub const LOCALIZED: [ConditionKind; 3] = [
        ConditionKind::PeriodontalDisease,
        ConditionKind::Caries,
        ConditionKind::DentalCalculus,
    ];

    /// Image-level conditions, in classification-head output order.
    pub const IMAGE_LEVEL: [ConditionKind; 2] =
        [ConditionKind::SoftDeposit, ConditionKind::Discoloration];

    pub fn task_form(self) -> TaskForm {
        match self {
            ConditionKind::PeriodontalDisease
            | ConditionKind::Caries
            | ConditionKind::DentalCalculus => TaskForm::Localized,
            ConditionKind::SoftDeposit | ConditionKind::Discoloration => TaskForm::ImageLevel,
        }
    }

    pub fn is_localized(self) -> bool {
        self.task_form() == TaskForm::Localized
    }

    /// Position in [`ConditionKind::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Index into [`ConditionKind::LOCALIZED`] or [`ConditionKind::IMAGE_LEVEL`].
    pub fn head_index(self) -> usize {
        match self {
            ConditionKind::PeriodontalDisease | ConditionKind::SoftDeposit => 0,
            ConditionKind::Caries | ConditionKind::Discoloration => 1,
            ConditionKind::DentalCalculus => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionKind::PeriodontalDisease => "periodontal_disease",
            ConditionKind::Caries => "caries",
            ConditionKind::DentalCalculus => "dental_calculus",
            ConditionKind::SoftDeposit => "soft_deposit",
            ConditionKind::Discoloration => "discoloration",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == name)
    }

    pub(crate) fn require_localized(self) -> Result<()> {
        match self.task_form() {
            TaskForm::Localized => Ok(()),
            TaskForm::ImageLevel => Err(Error::WrongTask {
                condition: self,
                expected: TaskForm::Localized.as_str(),
                actual: TaskForm::ImageLevel.as_str(),
            }),
        }
    }

    pub(crate) fn require_image_level(self) -> Result<()> {
        match self.task_form() {
            TaskForm::ImageLevel => Ok(()),
            TaskForm::Localized => Err(Error::WrongTask {
                condition: self,
                expected: TaskForm::ImageLevel.as_str(),
                actual: TaskForm::Localized.as_str(),
            }),
        }
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A box in fractional image coordinates (origin top-left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub condition: ConditionKind,
}

impl BoundingBox {
    pub fn new(
        condition: ConditionKind,
        cx: f64,
        cy: f64,
        w: f64,
        h: f64,
        confidence: f64,
    ) -> Result<Self> {
        condition.require_localized()?;
        let b = BoundingBox {
            cx,
            cy,
            w,
            h,
            confidence,
            condition,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("cx", self.cx),
            ("cy", self.cy),
            ("w", self.w),
            ("h", self.h),
            ("confidence", self.confidence),
        ];
        for (name, v) in fields {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation {
                    field: name.to_string(),
                    message: format!("{v} is outside [0, 1]"),
                });
            }
        }
        self.condition.require_localized()
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    /// Whether a point lies inside the box (edges inclusive).
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0() && x <= self.x1() && y >= self.y0() && y <= self.y1()
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.x1().min(other.x1()) - self.x0().max(other.x0())).max(0.0);
        let iy = (self.y1().min(other.y1()) - self.y0().max(other.y0())).max(0.0);
        let inter = ix * iy;
        let union = self.w * self.h + other.w * other.h - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Confidences for the two image-level conditions. Independent, not a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub soft_deposit: f64,
    pub discoloration: f64,
}

impl ClassScores {
    pub fn new(soft_deposit: f64, discoloration: f64) -> Result<Self> {
        let s = ClassScores {
            soft_deposit,
            discoloration,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("soft_deposit", self.soft_deposit),
            ("discoloration", self.discoloration),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation {
                    field: name.to_string(),
                    message: format!("{v} is outside [0, 1]"),
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, condition: ConditionKind) -> Result<f64> {
        condition.require_image_level()?;
        Ok(self.as_array()[condition.head_index()])
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.soft_deposit, self.discoloration]
    }

    pub fn from_array(values: [f64; 2]) -> Self {
        ClassScores {
            soft_deposit: values[0],
            discoloration: values[1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceLevel {
    Unlikely,
    Likely,
    VeryLikely,
}

impl ConfidenceLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfidenceLevel::Unlikely => "unlikely",
            ConfidenceLevel::Likely => "likely",
            ConfidenceLevel::VeryLikely => "very_likely",
        }
    }
}

/// The two operating points of one condition: `high` gates "very likely",
/// `low` gates "likely".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub t1: f64,
    pub t2: f64,
}

impl ThresholdPair {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        let p = ThresholdPair { t1, t2 };
        p.validate("thresholds")?;
        Ok(p)
    }

    fn validate(&self, field: &str) -> Result<()> {
        let ok = self.t1.is_finite()
            && self.t2.is_finite()
            && 0.0 <= self.t2
            && self.t2 <= self.t1
            && self.t1 <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation {
                field: field.to_string(),
                message: format!("need 0 <= t2 <= t1 <= 1, got t1={} t2={}", self.t1, self.t2),
            })
        }
    }
}

/// Per-condition threshold pairs. Produced by calibration and stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPointTable {
    pub conditions: BTreeMap<ConditionKind, ThresholdPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl OperatingPointTable {
    pub fn new(conditions: BTreeMap<ConditionKind, ThresholdPair>) -> Result<Self> {
        let t = OperatingPointTable {
            conditions,
            config_hash: None,
        };
        t.validate()?;
        Ok(t)
    }

    /// Same pair for every condition; handy for tests and bootstrapping.
    pub fn uniform(t1: f64, t2: f64) -> Result<Self> {
        let pair = ThresholdPair::new(t1, t2)?;
        Self::new(ConditionKind::ALL.into_iter().map(|c| (c, pair)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        for c in ConditionKind::ALL {
            match self.conditions.get(&c) {
                Some(p) => p.validate(c.as_str())?,
                None => {
                    return Err(Error::Validation {
                        field: c.as_str().to_string(),
                        message: "missing from operating point table".into(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, condition: ConditionKind) -> ThresholdPair {
        self.conditions[&condition]
    }
}

/// Maps a confidence to a user-facing level: `>= t1` very likely,
/// `[t2, t1)` likely, below `t2` unlikely.
pub fn level_for_score(
    score: f64,
    condition: ConditionKind,
    table: &OperatingPointTable,
) -> ConfidenceLevel {
    let pair = table.get(condition);
    level_for_pair(score, pair)
}

pub fn level_for_pair(score: f64, pair: ThresholdPair) -> ConfidenceLevel {
    if score >= pair.t1 {
        ConfidenceLevel::VeryLikely
    } else if score >= pair.t2 {
        ConfidenceLevel::Likely
    } else {
        ConfidenceLevel::Unlikely
    }
}

/// Image-wise confidence of a localized condition: the highest box confidence,
/// or 0 when there are no boxes.
pub fn image_score_from_boxes(boxes: &[BoundingBox], condition: ConditionKind) -> Result<f64> {
    condition.require_localized()?;
    if let Some(b) = boxes.iter().find(|b| b.condition != condition) {
        return Err(Error::Validation {
            field: "boxes".into(),
            message: format!("box of {} passed for {}", b.condition, condition),
        });
    }
    Ok(boxes.iter().map(|b| b.confidence).fold(0.0, f64::max))
}
