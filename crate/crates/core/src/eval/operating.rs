use serde::{Deserialize, Serialize};

use super::froc::FrocCurve;
use super::roc::RocCurve;
use crate::condition::ThresholdPair;
use crate::error::{Error, FrontierPoint, Result};

/// A curve with ascending thresholds and nonincreasing sensitivity and false
/// positive series.
pub trait OperatingCurve {
    fn thresholds(&self) -> &[f64];
    fn sensitivity(&self) -> &[f64];
    /// False positive rate for ROC, false positives per image for FROC.
    fn false_positives(&self) -> &[f64];

    fn frontier(&self) -> Vec<FrontierPoint> {
        self.thresholds()
            .iter()
            .zip(self.sensitivity())
            .zip(self.false_positives())
            .map(|((&threshold, &sensitivity), &false_positives)| FrontierPoint {
                threshold,
                sensitivity,
                false_positives,
            })
            .collect()
    }
}

impl OperatingCurve for RocCurve {
    fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
    fn sensitivity(&self) -> &[f64] {
        &self.sensitivity
    }
    fn false_positives(&self) -> &[f64] {
        &self.false_positive_rate
    }
}

impl OperatingCurve for FrocCurve {
    fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
    fn sensitivity(&self) -> &[f64] {
        &self.box_sensitivity
    }
    fn false_positives(&self) -> &[f64] {
        &self.false_positives_per_image
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OperatingPolicy {
    /// `t1` keeps false positives within `max_false_positives`; `t2` keeps
    /// sensitivity at or above `min_sensitivity`.
    Targets {
        max_false_positives: f64,
        min_sensitivity: f64,
    },
    /// Thresholds taken at fixed quantiles of the curve's threshold list.
    Quantiles { t1_quantile: f64, t2_quantile: f64 },
}

/// A strict first point (at most 5% false positives) and a lenient second
/// one (98% sensitivity). Looser targets make the two cross on a model that
/// separates well, which collapses the middle level.
impl Default for OperatingPolicy {
    fn default() -> Self {
        OperatingPolicy::Targets {
            max_false_positives: 0.05,
            min_sensitivity: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoints {
    pub pair: ThresholdPair,
    pub sensitivity_t1: f64,
    pub false_positives_t1: f64,
    pub sensitivity_t2: f64,
    pub false_positives_t2: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn infeasible(curve: &impl OperatingCurve, reason: String) -> Error {
    Error::InfeasiblePolicy {
        reason,
        frontier: curve.frontier(),
    }
}

pub fn select_operating_points(curve: &impl OperatingCurve, policy: OperatingPolicy) -> Result<OperatingPoints> {
    let th = curve.thresholds();
    let sens = curve.sensitivity();
    let fp = curve.false_positives();
    if th.is_empty() || sens.len() != th.len() || fp.len() != th.len() {
        return Err(Error::UndefinedMetric("operating curve is empty or ragged".into()));
    }
    let (i1, mut i2) = match policy {
        OperatingPolicy::Targets {
            max_false_positives,
            min_sensitivity,
        } => {
            let i1 = (0..th.len()).find(|&i| fp[i] <= max_false_positives).ok_or_else(|| {
                infeasible(curve, format!("no threshold keeps false positives at or below {max_false_positives}"))
            })?;
            let i2 = (0..th.len()).rev().find(|&i| sens[i] >= min_sensitivity).ok_or_else(|| {
                infeasible(curve, format!("no threshold reaches sensitivity {min_sensitivity}"))
            })?;
            (i1, i2)
        }
        OperatingPolicy::Quantiles {
            t1_quantile,
            t2_quantile,
        } => {
            let ok = |q: f64| (0.0..=1.0).contains(&q);
            if !ok(t1_quantile) || !ok(t2_quantile) {
                return Err(infeasible(curve, "quantiles must lie in [0, 1]".into()));
            }
            let at = |q: f64| ((th.len() - 1) as f64 * q).round() as usize;
            (at(t1_quantile), at(t2_quantile))
        }
    };
    let mut warnings = Vec::new();
    if i2 > i1 {
        warnings.push(format!(
            "t2 {} exceeded t1 {}; clamped down to t1",
            th[i2], th[i1]
        ));
        tracing::warn!(t1 = th[i1], t2 = th[i2], "operating points crossed, clamping t2");
        i2 = i1;
    }
    let t1 = th[i1].clamp(0.0, 1.0);
    let t2 = th[i2].clamp(0.0, t1);
    Ok(OperatingPoints {
        pair: ThresholdPair::new(t1, t2)?,
        sensitivity_t1: sens[i1],
        false_positives_t1: fp[i1],
        sensitivity_t2: sens[i2],
        false_positives_t2: fp[i2],
        warnings,
    })
}
