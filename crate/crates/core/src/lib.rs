//! Multi-task oral condition detection at desk scale.
//!
//! Three conditions (periodontal disease, caries, dental calculus) are
//! localized with boxes; two (soft deposit, discoloration) get image-level
//! scores explained with Grad-CAM heatmaps. Questionnaire answers and symptom
//! drawings can be fused into the regression heads.

pub mod condition;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod explain;
pub mod imaging;
pub mod model;
pub mod prior;

pub use condition::{
    image_score_from_boxes, level_for_score, BoundingBox, ClassScores, ConditionKind,
    ConfidenceLevel, OperatingPointTable, TaskForm, ThresholdPair,
};
pub use error::{Error, Result};
pub use imaging::{crop_to_guide, FracRect, GuideGeometry, OralImage};
pub use prior::{encode_priors, PriorProfile, QuestionnaireSchema, Stroke, SymptomKind};
