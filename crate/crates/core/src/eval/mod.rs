//! Detection and classification metrics: ROC/AUC per condition, FROC for the
//! box-localized conditions, box matching and operating-point calibration.

mod froc;
mod matching;
mod operating;
mod plot;
mod roc;

pub use froc::{froc, FrocCurve, ImageBoxes};
pub use matching::{match_boxes, MatchCriterion, MatchResult};
pub use operating::{select_operating_points, OperatingCurve, OperatingPoints, OperatingPolicy};
pub use plot::{render_curves, PlotSeries};
pub use roc::{roc, RocCurve};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::condition::{ConditionKind, OperatingPointTable};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::model::Detection;

/// Operating points reported in the original clinical study, kept for
/// reference in reports. Not targets for the synthetic task.
pub mod reference {
    /// Average sensitivity and false positive rate at the first (strict) point.
    pub const FIRST_POINT: (f64, f64) = (0.668, 0.191);
    /// Average sensitivity and false positive rate at the second (lenient) point.
    pub const SECOND_POINT: (f64, f64) = (0.794, 0.405);
    /// Average AUC of the prior-enhanced model over the five conditions.
    pub const ENHANCED_MEAN_AUC: f64 = 0.787;
    /// Relative improvement of that average over the image-only model, percent.
    pub const MEAN_BOOST_PERCENT: f64 = 1.55;
}

/// Column order of the summary table.
pub const TABLE_ORDER: [ConditionKind; 5] = [
    ConditionKind::PeriodontalDisease,
    ConditionKind::Caries,
    ConditionKind::SoftDeposit,
    ConditionKind::DentalCalculus,
    ConditionKind::Discoloration,
];

pub fn short_name(condition: ConditionKind) -> &'static str {
    match condition {
        ConditionKind::PeriodontalDisease => "PD",
        ConditionKind::Caries => "CA",
        ConditionKind::SoftDeposit => "SD",
        ConditionKind::DentalCalculus => "DC",
        ConditionKind::Discoloration => "DD",
    }
}

/// Image-wise (score, label) pairs for one condition.
pub fn condition_scores(detections: &[Detection], samples: &[Sample], condition: ConditionKind) -> Vec<(f64, bool)> {
    detections
        .iter()
        .zip(samples)
        .map(|(d, s)| (d.scores[condition.index()], s.has(condition)))
        .collect()
}

/// All curves for one model on one sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub roc: BTreeMap<ConditionKind, RocCurve>,
    pub froc: BTreeMap<ConditionKind, FrocCurve>,
    pub images: usize,
}

impl Evaluation {
    pub fn auc(&self, condition: ConditionKind) -> f64 {
        self.roc[&condition].auc
    }

    pub fn mean_auc(&self) -> f64 {
        ConditionKind::ALL.iter().map(|&c| self.auc(c)).sum::<f64>() / 5.0
    }
}

pub fn evaluate(detections: &[Detection], samples: &[Sample], criterion: MatchCriterion) -> Result<Evaluation> {
    if detections.len() != samples.len() {
        return Err(Error::Shape(format!(
            "{} detections for {} samples",
            detections.len(),
            samples.len()
        )));
    }
    let mut rocs = BTreeMap::new();
    for c in ConditionKind::ALL {
        let curve = roc(&condition_scores(detections, samples, c))
            .map_err(|e| Error::UndefinedMetric(format!("{c}: {e}")))?;
        rocs.insert(c, curve);
    }
    let mut frocs = BTreeMap::new();
    for c in ConditionKind::LOCALIZED {
        let images: Vec<ImageBoxes> = detections
            .iter()
            .zip(samples)
            .map(|(d, s)| ImageBoxes::new(d.boxes_for(c), s.boxes_for(c)))
            .collect();
        frocs.insert(c, froc(&images, criterion).map_err(|e| Error::UndefinedMetric(format!("{c}: {e}")))?);
    }
    Ok(Evaluation {
        roc: rocs,
        froc: frocs,
        images: samples.len(),
    })
}

/// One row of the summary table: AUC per condition plus their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub values: BTreeMap<ConditionKind, f64>,
    pub average: f64,
}

/// AUC table with one row per model and, when two models are given, a row of
/// relative improvements in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub rows: Vec<SummaryRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boost_percent: Option<SummaryRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl MetricSummary {
    pub fn new(models: &[(&str, &Evaluation)]) -> Self {
        let rows: Vec<SummaryRow> = models
            .iter()
            .map(|(label, e)| SummaryRow {
                label: label.to_string(),
                values: ConditionKind::ALL.iter().map(|&c| (c, e.auc(c))).collect(),
                average: e.mean_auc(),
            })
            .collect();
        let boost_percent = match rows.as_slice() {
            [base, enhanced] => {
                let pct = |b: f64, e: f64| if b > 0.0 { (e - b) / b * 100.0 } else { 0.0 };
                Some(SummaryRow {
                    label: "Boost (%)".into(),
                    values: ConditionKind::ALL
                        .iter()
                        .map(|&c| (c, pct(base.values[&c], enhanced.values[&c])))
                        .collect(),
                    average: pct(base.average, enhanced.average),
                })
            }
            _ => None,
        };
        MetricSummary {
            rows,
            boost_percent,
            config_hash: None,
        }
    }

    /// Plain-text table, columns PD CA SD DC DD Avg.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "");
        for c in TABLE_ORDER {
            let _ = write!(out, " {:>8}", short_name(c));
        }
        let _ = writeln!(out, " {:>8}", "Avg.");
        for row in &self.rows {
            let _ = write!(out, "{:<12}", row.label);
            for c in TABLE_ORDER {
                let _ = write!(out, " {:>8.3}", row.values[&c]);
            }
            let _ = writeln!(out, " {:>8.3}", row.average);
        }
        if let Some(row) = &self.boost_percent {
            let _ = write!(out, "{:<12}", row.label);
            for c in TABLE_ORDER {
                let _ = write!(out, " {:>+8.2}", row.values[&c]);
            }
            let _ = writeln!(out, " {:>+8.2}", row.average);
        }
        out
    }
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,sensitivity,false_positive_rate\n");
    for i in 0..curve.thresholds.len() {
        let _ = writeln!(
            out,
            "{},{},{}",
            curve.thresholds[i], curve.sensitivity[i], curve.false_positive_rate[i]
        );
    }
    out
}

pub fn froc_csv(curve: &FrocCurve) -> String {
    let mut out = String::from("threshold,box_sensitivity,false_positives_per_image\n");
    for i in 0..curve.thresholds.len() {
        let _ = writeln!(
            out,
            "{},{},{}",
            curve.thresholds[i], curve.box_sensitivity[i], curve.false_positives_per_image[i]
        );
    }
    out
}

/// Per-condition operating points from image-wise ROC curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub table: OperatingPointTable,
    pub points: BTreeMap<ConditionKind, OperatingPoints>,
    pub policy: OperatingPolicy,
}

pub fn calibrate(evaluation: &Evaluation, policy: OperatingPolicy) -> Result<Calibration> {
    let mut points = BTreeMap::new();
    for c in ConditionKind::ALL {
        let p = select_operating_points(&evaluation.roc[&c], policy).map_err(|e| match e {
            Error::InfeasiblePolicy { reason, frontier } => Error::InfeasiblePolicy {
                reason: format!("{c}: {reason}"),
                frontier,
            },
            other => other,
        })?;
        points.insert(c, p);
    }
    let table = OperatingPointTable::new(points.iter().map(|(&c, p)| (c, p.pair)).collect())?;
    Ok(Calibration { table, points, policy })
}
