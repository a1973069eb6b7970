//! Structured non-image inputs: questionnaire answers and symptom drawings.
//!
//! Answers are one-hot encoded into a flat vector, drawings are rasterized
//! into a two-channel mask (pain, bleeding). Together they form the prior
//! feature map that the enhanced model concatenates with its image features.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QUESTIONNAIRE_SCHEMA_VERSION: u32 = 1;

/// Channels of the symptom mask.
pub const SYMPTOM_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub choices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireSchema {
    pub schema_version: u32,
    pub questions: Vec<Question>,
}

impl Default for QuestionnaireSchema {
    fn default() -> Self {
        let q = |id: &str, text: &str, choices: &[&str]| Question {
            id: id.into(),
            text: text.into(),
            choices: choices.iter().map(|c| c.to_string()).collect(),
        };
        QuestionnaireSchema {
            schema_version: QUESTIONNAIRE_SCHEMA_VERSION,
            questions: vec![
                q(
                    "brushing_frequency",
                    "How often do you brush your teeth?",
                    &["twice a day or more", "once a day", "a few times a week", "rarely"],
                ),
                q(
                    "brushing_method",
                    "Which brushing method do you use?",
                    &["Bass method", "horizontal scrubbing", "not sure"],
                ),
                q("flossing", "Do you floss?", &["daily", "sometimes", "never"]),
                q(
                    "smoking",
                    "Do you smoke or chew tobacco?",
                    &["never", "occasionally", "daily"],
                ),
                q(
                    "bleeding_history",
                    "Do your gums bleed when brushing?",
                    &["never", "sometimes", "often"],
                ),
                q(
                    "pain_history",
                    "Have you had tooth pain recently?",
                    &["no", "mild", "severe"],
                ),
                q(
                    "last_dental_visit",
                    "When was your last dental visit or cleaning?",
                    &["within 6 months", "within a year", "1-3 years ago", "more than 3 years ago"],
                ),
            ],
        }
    }
}

impl QuestionnaireSchema {
    /// Uniform schema with `choices[i]` options for question `i`; used in tests.
    pub fn with_choice_counts(choices: &[usize]) -> Self {
        QuestionnaireSchema {
            schema_version: QUESTIONNAIRE_SCHEMA_VERSION,
            questions: choices
                .iter()
                .enumerate()
                .map(|(i, &n)| Question {
                    id: format!("q{}", i + 1),
                    text: format!("question {}", i + 1),
                    choices: (0..n).map(|k| format!("choice {k}")).collect(),
                })
                .collect(),
        }
    }

    /// Total one-hot width.
    pub fn one_hot_width(&self) -> usize {
        self.questions.iter().map(|q| q.choices.len()).sum()
    }

    /// Depth of the encoded prior map: one-hot width plus the symptom channels.
    pub fn prior_depth(&self) -> usize {
        self.one_hot_width() + SYMPTOM_CHANNELS
    }

    pub fn question_index(&self, id: &str) -> Option<usize> {
        self.questions.iter().position(|q| q.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        if self.questions.is_empty() {
            return Err(Error::Config("questionnaire has no questions".into()));
        }
        for q in &self.questions {
            if q.choices.len() < 2 {
                return Err(Error::Config(format!("question {} needs at least two choices", q.id)));
            }
        }
        Ok(())
    }

    /// Check one answer; the error names the question by 1-based number and id.
    pub fn check_answer(&self, question: usize, choice: usize) -> Result<()> {
        let q = self.questions.get(question).ok_or_else(|| Error::Validation {
            field: format!("question {}", question + 1),
            message: format!("schema has only {} questions", self.questions.len()),
        })?;
        if choice >= q.choices.len() {
            return Err(Error::Validation {
                field: format!("question {} ({})", question + 1, q.id),
                message: format!(
                    "answer index {choice} out of range 0..{}",
                    q.choices.len()
                ),
            });
        }
        Ok(())
    }

    pub fn check_answers(&self, answers: &[usize]) -> Result<()> {
        if answers.len() != self.questions.len() {
            return Err(Error::Validation {
                field: "answers".into(),
                message: format!(
                    "expected {} answers, got {}",
                    self.questions.len(),
                    answers.len()
                ),
            });
        }
        for (i, &a) in answers.iter().enumerate() {
            self.check_answer(i, a)?;
        }
        Ok(())
    }

    pub fn one_hot(&self, answers: &[usize]) -> Result<Vec<f64>> {
        self.check_answers(answers)?;
        let mut v = vec![0.0; self.one_hot_width()];
        let mut offset = 0;
        for (q, &a) in self.questions.iter().zip(answers) {
            v[offset + a] = 1.0;
            offset += q.choices.len();
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymptomKind {
    Pain,
    Bleeding,
}

impl SymptomKind {
    pub fn channel(self) -> usize {
        match self {
            SymptomKind::Pain => 0,
            SymptomKind::Bleeding => 1,
        }
    }
}

/// A freehand polyline in fractional image coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub kind: SymptomKind,
    pub points: Vec<[f64; 2]>,
}

/// Questionnaire answers plus the rasterized pain/bleeding mask, `(H, W, 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorProfile {
    pub answers: Vec<usize>,
    pub symptom_mask: Array3<u8>,
}

impl PriorProfile {
    pub fn new(answers: Vec<usize>, symptom_mask: Array3<u8>, schema: &QuestionnaireSchema) -> Result<Self> {
        schema.check_answers(&answers)?;
        if symptom_mask.shape()[2] != SYMPTOM_CHANNELS {
            return Err(Error::Shape(format!(
                "symptom mask must have {SYMPTOM_CHANNELS} channels, got {:?}",
                symptom_mask.shape()
            )));
        }
        if symptom_mask.iter().any(|&v| v > 1) {
            return Err(Error::Validation {
                field: "symptom_mask".into(),
                message: "mask values must be 0 or 1".into(),
            });
        }
        Ok(PriorProfile {
            answers,
            symptom_mask,
        })
    }

    pub fn empty_mask(size: usize) -> Array3<u8> {
        Array3::zeros((size, size, SYMPTOM_CHANNELS))
    }
}

/// Build the `(H, W, Q + 2)` prior feature map: the one-hot answer vector
/// copied to every location, then the symptom mask. `None` yields zeros.
pub fn encode_priors(
    profile: Option<&PriorProfile>,
    schema: &QuestionnaireSchema,
    height: usize,
    width: usize,
) -> Result<Array3<f64>> {
    let q = schema.one_hot_width();
    let mut map = Array3::zeros((height, width, q + SYMPTOM_CHANNELS));
    let Some(profile) = profile else {
        return Ok(map);
    };
    let (mh, mw, _) = profile.symptom_mask.dim();
    if (mh, mw) != (height, width) {
        return Err(Error::Shape(format!(
            "symptom mask is {mh}x{mw}, model input is {height}x{width}"
        )));
    }
    let one_hot = schema.one_hot(&profile.answers)?;
    for ((y, x, ch), v) in map.indexed_iter_mut() {
        *v = if ch < q {
            one_hot[ch]
        } else {
            profile.symptom_mask[[y, x, ch - q]] as f64
        };
    }
    Ok(map)
}

/// Average-pool an `(H, W, D)` map to `(D, G, G)` feature resolution.
/// `H` and `W` must be multiples of `G`.
pub fn pool_to_grid(map: &ArrayView3<f64>, grid: usize) -> Result<Array3<f64>> {
    let (h, w, d) = map.dim();
    if grid == 0 || h % grid != 0 || w % grid != 0 {
        return Err(Error::Shape(format!("{h}x{w} prior map does not tile into a {grid}x{grid} grid")));
    }
    let (bh, bw) = (h / grid, w / grid);
    let norm = 1.0 / (bh * bw) as f64;
    let mut out = Array3::zeros((d, grid, grid));
    for ((y, x, ch), v) in map.indexed_iter() {
        out[[ch, y / bh, x / bw]] += v * norm;
    }
    Ok(out)
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Rasterize strokes into an `(H, W, 2)` binary mask. A pixel is set when its
/// center lies within `brush_radius` pixels of the polyline.
pub fn rasterize_strokes(strokes: &[Stroke], height: usize, width: usize, brush_radius: f64) -> Result<Array3<u8>> {
    let mut mask = Array3::zeros((height, width, SYMPTOM_CHANNELS));
    paint_strokes(&mut mask, strokes, brush_radius)?;
    Ok(mask)
}

/// Add strokes onto an existing mask.
pub fn paint_strokes(mask: &mut Array3<u8>, strokes: &[Stroke], brush_radius: f64) -> Result<()> {
    let (height, width, _) = mask.dim();
    for (si, stroke) in strokes.iter().enumerate() {
        if stroke.points.is_empty() {
            return Err(Error::Validation {
                field: format!("strokes[{si}].points"),
                message: "stroke has no points".into(),
            });
        }
        if let Some(p) = stroke
            .points
            .iter()
            .find(|p| !p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)))
        {
            return Err(Error::Validation {
                field: format!("strokes[{si}].points"),
                message: format!("point {p:?} outside [0, 1]"),
            });
        }
        let pts: Vec<(f64, f64)> = stroke
            .points
            .iter()
            .map(|p| (p[0] * width as f64, p[1] * height as f64))
            .collect();
        let segments: Vec<((f64, f64), (f64, f64))> = if pts.len() == 1 {
            vec![(pts[0], pts[0])]
        } else {
            pts.windows(2).map(|w| (w[0], w[1])).collect()
        };
        let ch = stroke.kind.channel();
        for (a, b) in segments {
            let xmin = ((a.0.min(b.0) - brush_radius - 1.0).floor().max(0.0)) as usize;
            let xmax = ((a.0.max(b.0) + brush_radius + 1.0).ceil() as usize).min(width);
            let ymin = ((a.1.min(b.1) - brush_radius - 1.0).floor().max(0.0)) as usize;
            let ymax = ((a.1.max(b.1) + brush_radius + 1.0).ceil() as usize).min(height);
            for y in ymin..ymax {
                for x in xmin..xmax {
                    let center = (x as f64 + 0.5, y as f64 + 0.5);
                    if point_segment_distance(center, a, b) <= brush_radius {
                        mask[[y, x, ch]] = 1;
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_three_choice_questions_give_depth_23() {
        let schema = QuestionnaireSchema::with_choice_counts(&[3; 7]);
        assert_eq!(schema.one_hot_width(), 21);
        assert_eq!(schema.prior_depth(), 23);
        let map = encode_priors(None, &schema, 8, 8).unwrap();
        assert_eq!(map.dim(), (8, 8, 23));
    }

    #[test]
    fn default_schema_is_valid() {
        let schema = QuestionnaireSchema::default();
        schema.validate().unwrap();
        assert_eq!(schema.questions.len(), 7);
        assert!(schema.questions.iter().all(|q| (3..=4).contains(&q.choices.len())));
    }

    #[test]
    fn replicated_answers_and_empty_mask() {
        let schema = QuestionnaireSchema::with_choice_counts(&[3; 7]);
        let profile = PriorProfile::new(vec![0; 7], PriorProfile::empty_mask(16), &schema).unwrap();
        let map = encode_priors(Some(&profile), &schema, 16, 16).unwrap();
        for ch in 0..21 {
            let first = map[[0, 0, ch]];
            assert!(map.index_axis(ndarray::Axis(2), ch).iter().all(|&v| v == first));
            assert_eq!(first, if ch % 3 == 0 { 1.0 } else { 0.0 });
        }
        assert!(map.slice(ndarray::s![.., .., 21..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn each_question_has_one_hot_entry() {
        let schema = QuestionnaireSchema::default();
        let v = schema.one_hot(&[1, 2, 0, 1, 2, 0, 3]).unwrap();
        assert_eq!(v.iter().sum::<f64>(), 7.0);
    }

    #[test]
    fn out_of_range_answer_names_question() {
        let schema = QuestionnaireSchema::default();
        let err = schema.check_answers(&[0, 0, 9, 0, 0, 0, 0]).unwrap_err();
        match err {
            Error::Validation { field, .. } => assert!(field.starts_with("question 3"), "{field}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mask_size_mismatch_is_shape_error() {
        let schema = QuestionnaireSchema::default();
        let profile = PriorProfile::new(vec![0; 7], PriorProfile::empty_mask(8), &schema).unwrap();
        assert!(matches!(encode_priors(Some(&profile), &schema, 16, 16), Err(Error::Shape(_))));
    }

    #[test]
    fn empty_stroke_list_gives_zero_mask() {
        let m = rasterize_strokes(&[], 32, 32, 1.5).unwrap();
        assert!(m.iter().all(|&v| v == 0));
    }

    #[test]
    fn l_shaped_stroke_matches_hand_rasterization() {
        // pixel centers (2.5,3.5) -> (10.5,3.5) -> (10.5,9.5) on a 16x16 grid
        let f = |p: f64| p / 16.0;
        let stroke = Stroke {
            kind: SymptomKind::Pain,
            points: vec![[f(2.5), f(3.5)], [f(10.5), f(3.5)], [f(10.5), f(9.5)]],
        };
        let m = rasterize_strokes(&[stroke], 16, 16, 0.5).unwrap();
        let mut expected = Array3::<u8>::zeros((16, 16, 2));
        for x in 2..=10 {
            expected[[3, x, 0]] = 1;
        }
        for y in 3..=9 {
            expected[[y, 10, 0]] = 1;
        }
        assert_eq!(m, expected);
    }

    #[test]
    fn single_pain_pixel_sets_channel_q_exactly() {
        let schema = QuestionnaireSchema::with_choice_counts(&[3; 7]);
        let stroke = Stroke {
            kind: SymptomKind::Pain,
            points: vec![[5.5 / 16.0, 7.5 / 16.0]],
        };
        let mask = rasterize_strokes(&[stroke], 16, 16, 0.5).unwrap();
        let profile = PriorProfile::new(vec![1; 7], mask, &schema).unwrap();
        let map = encode_priors(Some(&profile), &schema, 16, 16).unwrap();
        for ((y, x), v) in map.index_axis(ndarray::Axis(2), 21).indexed_iter() {
            assert_eq!(*v, if (y, x) == (7, 5) { 1.0 } else { 0.0 });
        }
        assert!(map.index_axis(ndarray::Axis(2), 22).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pooling_averages_blocks() {
        let mut map = Array3::zeros((4, 4, 1));
        map[[0, 0, 0]] = 1.0;
        map[[3, 3, 0]] = 4.0;
        let pooled = pool_to_grid(&map.view(), 2).unwrap();
        assert_eq!(pooled[[0, 0, 0]], 0.25);
        assert_eq!(pooled[[0, 1, 1]], 1.0);
        assert_eq!(pooled[[0, 0, 1]], 0.0);
    }
}
