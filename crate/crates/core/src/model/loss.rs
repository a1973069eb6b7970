//! Multi-task loss: single-shot box loss for the localized conditions plus
//! binary cross-entropy for the image-level conditions, weighted 1:1.

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use super::network::Logits;
use super::params::{BOX_CHANNELS, BOX_FIELDS};
use crate::condition::{ClassScores, ConditionKind};
use crate::dataset::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the squared coordinate error on positive cells.
    pub coord_weight: f64,
    /// Weight of the confidence term on cells without an object.
    pub noobj_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            coord_weight: 5.0,
            noobj_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub localization: f64,
    pub classification: f64,
    pub total: f64,
}

/// Activated network output for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    pub grid: usize,
    /// `(condition, row, col, field)` with fields x offset in cell, y offset
    /// in cell, width, height, confidence; all in `[0, 1]`. Conditions follow
    /// [`ConditionKind::LOCALIZED`].
    pub boxes: Array4<f64>,
    pub class_scores: ClassScores,
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl RawPrediction {
    pub(crate) fn from_logits(logits: &Logits, grid: usize) -> Self {
        let n_loc = ConditionKind::LOCALIZED.len();
        let boxes = Array4::from_shape_fn((n_loc, grid, grid, BOX_FIELDS), |(k, r, c, f)| {
            sigmoid(logits.boxes[[k * BOX_FIELDS + f, r * grid + c]])
        });
        RawPrediction {
            grid,
            boxes,
            class_scores: ClassScores::from_array([sigmoid(logits.class[0]), sigmoid(logits.class[1])]),
        }
    }
}

/// Per-cell regression targets derived from a sample's ground truth.
#[derive(Debug, Clone)]
pub(crate) struct Targets {
    /// `(condition, cell)` object flags.
    pub(crate) object: Array2<bool>,
    /// `(condition, cell, [x offset, y offset, w, h])`.
    pub(crate) coords: ndarray::Array3<f64>,
    pub(crate) class: [f64; 2],
}

impl Targets {
    /// Center-cell assignment: each box is owned by the cell containing its
    /// center. When two boxes of one condition share a cell the larger wins.
    pub(crate) fn build(sample: &Sample, grid: usize) -> Self {
        let n_loc = ConditionKind::LOCALIZED.len();
        let cells = grid * grid;
        let mut object = Array2::from_elem((n_loc, cells), false);
        let mut coords = ndarray::Array3::zeros((n_loc, cells, 4));
        let mut area = Array2::<f64>::zeros((n_loc, cells));
        let g = grid as f64;
        for b in &sample.boxes {
            let k = b.condition.head_index();
            let col = ((b.cx * g).floor() as usize).min(grid - 1);
            let row = ((b.cy * g).floor() as usize).min(grid - 1);
            let cell = row * grid + col;
            if object[[k, cell]] && area[[k, cell]] >= b.w * b.h {
                continue;
            }
            object[[k, cell]] = true;
            area[[k, cell]] = b.w * b.h;
            coords[[k, cell, 0]] = (b.cx * g - col as f64).clamp(0.0, 1.0);
            coords[[k, cell, 1]] = (b.cy * g - row as f64).clamp(0.0, 1.0);
            coords[[k, cell, 2]] = b.w;
            coords[[k, cell, 3]] = b.h;
        }
        let s = sample.labels.as_scores();
        Targets {
            object,
            coords,
            class: [s.soft_deposit, s.discoloration],
        }
    }
}

const PROB_EPS: f64 = 1e-15;

fn bce_prob(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Numerically stable BCE on a logit.
fn bce_logit(z: f64, target: f64) -> f64 {
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

/// Loss of an activated prediction against a sample's ground truth.
pub fn loss(raw: &RawPrediction, truth: &Sample, config: &LossConfig) -> Result<LossBreakdown> {
    if raw.boxes.iter().any(|v| !v.is_finite())
        || !raw.class_scores.soft_deposit.is_finite()
        || !raw.class_scores.discoloration.is_finite()
    {
        return Err(Error::Numeric("prediction contains NaN or infinity".into()));
    }
    let grid = raw.grid;
    let targets = Targets::build(truth, grid);
    let mut localization = 0.0;
    for k in 0..ConditionKind::LOCALIZED.len() {
        for r in 0..grid {
            for c in 0..grid {
                let cell = r * grid + c;
                let conf = raw.boxes[[k, r, c, 4]];
                if targets.object[[k, cell]] {
                    localization += bce_prob(conf, 1.0);
                    for f in 0..4 {
                        let d = raw.boxes[[k, r, c, f]] - targets.coords[[k, cell, f]];
                        localization += config.coord_weight * d * d;
                    }
                } else {
                    localization += config.noobj_weight * bce_prob(conf, 0.0);
                }
            }
        }
    }
    let scores = raw.class_scores.as_array();
    let classification: f64 = (0..2).map(|i| bce_prob(scores[i], targets.class[i])).sum();
    Ok(LossBreakdown {
        localization,
        classification,
        total: localization + classification,
    })
}

/// Loss and its gradient with respect to the logits.
pub(crate) fn loss_and_grad(logits: &Logits, targets: &Targets, config: &LossConfig) -> Result<(LossBreakdown, Logits)> {
    if logits.boxes.iter().chain(logits.class.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("network output contains NaN or infinity".into()));
    }
    let cells = logits.boxes.ncols();
    let mut d_boxes = Array2::zeros((BOX_CHANNELS, cells));
    let mut localization = 0.0;
    for k in 0..ConditionKind::LOCALIZED.len() {
        let conf_row = k * BOX_FIELDS + 4;
        for cell in 0..cells {
            let z = logits.boxes[[conf_row, cell]];
            let p = sigmoid(z);
            if targets.object[[k, cell]] {
                localization += bce_logit(z, 1.0);
                d_boxes[[conf_row, cell]] = p - 1.0;
                for f in 0..4 {
                    let row = k * BOX_FIELDS + f;
                    let s = sigmoid(logits.boxes[[row, cell]]);
                    let d = s - targets.coords[[k, cell, f]];
                    localization += config.coord_weight * d * d;
                    d_boxes[[row, cell]] = 2.0 * config.coord_weight * d * s * (1.0 - s);
                }
            } else {
                localization += config.noobj_weight * bce_logit(z, 0.0);
                d_boxes[[conf_row, cell]] = config.noobj_weight * p;
            }
        }
    }
    let mut classification = 0.0;
    let mut d_class = Array1::zeros(2);
    for i in 0..2 {
        let z = logits.class[i];
        classification += bce_logit(z, targets.class[i]);
        d_class[i] = sigmoid(z) - targets.class[i];
    }
    let total = localization + classification;
    if !total.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite ({total})")));
    }
    Ok((
        LossBreakdown {
            localization,
            classification,
            total,
        },
        Logits {
            boxes: d_boxes,
            class: d_class,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition::BoundingBox;
    use crate::dataset::ImageLabels;
    use crate::imaging::OralImage;
    use rand::{Rng, SeedableRng};

    fn sample(boxes: Vec<BoundingBox>, labels: ImageLabels) -> Sample {
        Sample {
            id: "t".into(),
            image: OralImage::filled(8, 8, [0.5; 3]),
            boxes,
            labels,
            regions: vec![],
            priors: None,
            person_id: "p".into(),
        }
    }

    fn perfect(truth: &Sample, grid: usize) -> RawPrediction {
        let t = Targets::build(truth, grid);
        let boxes = Array4::from_shape_fn((3, grid, grid, 5), |(k, r, c, f)| {
            let cell = r * grid + c;
            match f {
                4 => t.object[[k, cell]] as u8 as f64,
                _ => t.coords[[k, cell, f]],
            }
        });
        RawPrediction {
            grid,
            boxes,
            class_scores: ClassScores::from_array(t.class),
        }
    }

    #[test]
    fn perfect_prediction_has_no_classification_loss() {
        let truth = sample(
            vec![BoundingBox::new(ConditionKind::Caries, 0.3, 0.6, 0.1, 0.1, 1.0).unwrap()],
            ImageLabels {
                soft_deposit: true,
                discoloration: false,
            },
        );
        let l = loss(&perfect(&truth, 4), &truth, &LossConfig::default()).unwrap();
        assert!(l.classification <= 1e-6);
        assert!(l.localization <= 1e-6);
    }

    #[test]
    fn half_scores_cost_two_ln_two() {
        let truth = sample(
            vec![],
            ImageLabels {
                soft_deposit: true,
                discoloration: false,
            },
        );
        let mut raw = perfect(&truth, 4);
        raw.class_scores = ClassScores::from_array([0.5, 0.5]);
        let l = loss(&raw, &truth, &LossConfig::default()).unwrap();
        assert!((l.classification - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((l.classification - 1.386).abs() < 1e-3);
    }

    #[test]
    fn nan_prediction_is_numeric_error() {
        let truth = sample(vec![], ImageLabels::default());
        let mut raw = perfect(&truth, 4);
        raw.boxes[[0, 1, 1, 2]] = f64::NAN;
        assert!(matches!(loss(&raw, &truth, &LossConfig::default()), Err(Error::Numeric(_))));
    }

    /// Second, loop-by-loop implementation of the loss formula.
    fn oracle_loss(raw: &RawPrediction, truth: &Sample, cfg: &LossConfig) -> f64 {
        let g = raw.grid;
        let mut total = 0.0;
        for (k, cond) in ConditionKind::LOCALIZED.iter().enumerate() {
            // owner box per cell: larger area wins
            let mut owner: Vec<Option<BoundingBox>> = vec![None; g * g];
            for b in truth.boxes.iter().filter(|b| b.condition == *cond) {
                let col = ((b.cx * g as f64) as usize).min(g - 1);
                let row = ((b.cy * g as f64) as usize).min(g - 1);
                let slot = &mut owner[row * g + col];
                match slot {
                    Some(o) if o.w * o.h >= b.w * b.h => {}
                    _ => *slot = Some(*b),
                }
            }
            for r in 0..g {
                for c in 0..g {
                    let p = raw.boxes[[k, r, c, 4]];
                    match owner[r * g + c] {
                        Some(b) => {
                            total += -p.ln();
                            let tx = b.cx * g as f64 - c as f64;
                            let ty = b.cy * g as f64 - r as f64;
                            let want = [tx, ty, b.w, b.h];
                            for f in 0..4 {
                                total += cfg.coord_weight * (raw.boxes[[k, r, c, f]] - want[f]).powi(2);
                            }
                        }
                        None => total += cfg.noobj_weight * -(1.0 - p).ln(),
                    }
                }
            }
        }
        let labels = [truth.labels.soft_deposit, truth.labels.discoloration];
        let scores = raw.class_scores.as_array();
        for i in 0..2 {
            total += if labels[i] { -scores[i].ln() } else { -(1.0 - scores[i]).ln() };
        }
        total
    }

    #[test]
    fn loss_matches_independent_reimplementation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let cfg = LossConfig::default();
        for _ in 0..25 {
            let grid = 4;
            let boxes: Vec<_> = (0..rng.random_range(0..6))
                .map(|_| {
                    let cond = ConditionKind::LOCALIZED[rng.random_range(0..3)];
                    BoundingBox::new(
                        cond,
                        rng.random_range(0.05..0.95),
                        rng.random_range(0.05..0.95),
                        rng.random_range(0.02..0.3),
                        rng.random_range(0.02..0.3),
                        1.0,
                    )
                    .unwrap()
                })
                .collect();
            let truth = sample(
                boxes,
                ImageLabels {
                    soft_deposit: rng.random(),
                    discoloration: rng.random(),
                },
            );
            let raw = RawPrediction {
                grid,
                boxes: Array4::from_shape_simple_fn((3, grid, grid, 5), || rng.random_range(0.01..0.99)),
                class_scores: ClassScores::from_array([rng.random_range(0.01..0.99), rng.random_range(0.01..0.99)]),
            };
            let got = loss(&raw, &truth, &cfg).unwrap().total;
            let want = oracle_loss(&raw, &truth, &cfg);
            assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn logit_loss_agrees_with_probability_loss() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let grid = 4;
        let truth = sample(
            vec![BoundingBox::new(ConditionKind::DentalCalculus, 0.7, 0.2, 0.2, 0.1, 1.0).unwrap()],
            ImageLabels {
                soft_deposit: false,
                discoloration: true,
            },
        );
        let logits = Logits {
            boxes: Array2::from_shape_simple_fn((15, grid * grid), || rng.random_range(-3.0..3.0)),
            class: Array1::from_shape_simple_fn(2, || rng.random_range(-3.0..3.0)),
        };
        let (a, _) = loss_and_grad(&logits, &Targets::build(&truth, grid), &LossConfig::default()).unwrap();
        let raw = RawPrediction::from_logits(&logits, grid);
        let b = loss(&raw, &truth, &LossConfig::default()).unwrap();
        assert!((a.total - b.total).abs() < 1e-9);
    }
}
