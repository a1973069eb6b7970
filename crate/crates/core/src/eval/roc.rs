use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Receiver operating characteristic over every distinct observed score plus
/// the 0 and 1 endpoints. A sample counts as predicted positive when its
/// score is at or above the threshold. Thresholds are ascending, so both rate
/// series are nonincreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub false_positive_rate: Vec<f64>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn roc(scores: &[(f64, bool)]) -> Result<RocCurve> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::UndefinedMetric(format!("non-finite score {s}")));
    }
    let positives = scores.iter().filter(|(_, l)| *l).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {positives} positive and {negatives} negative"
        )));
    }

    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut thresholds: Vec<f64> = sorted.iter().map(|(s, _)| *s).collect();
    thresholds.push(0.0);
    thresholds.push(1.0);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    // walk thresholds from high to low, admitting scores as they pass
    let (p, n) = (positives as f64, negatives as f64);
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut cursor = 0usize;
    let mut sens_desc = Vec::with_capacity(thresholds.len());
    let mut fpr_desc = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        while cursor < sorted.len() && sorted[cursor].0 >= t {
            if sorted[cursor].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            cursor += 1;
        }
        sens_desc.push(tp as f64 / p);
        fpr_desc.push(fp as f64 / n);
    }

    // trapezoids between (0,0), the curve, and (1,1)
    let mut auc = 0.0;
    let (mut x0, mut y0) = (0.0, 0.0);
    for (&x, &y) in fpr_desc.iter().zip(&sens_desc).chain(std::iter::once((&1.0, &1.0))) {
        auc += (x - x0) * (y + y0) / 2.0;
        x0 = x;
        y0 = y;
    }

    thresholds.reverse();
    sens_desc.reverse();
    fpr_desc.reverse();
    Ok(RocCurve {
        thresholds,
        sensitivity: sens_desc,
        false_positive_rate: fpr_desc,
        auc: auc.clamp(0.0, 1.0),
        positives,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    fn pairs(pos: &[f64], neg: &[f64]) -> Vec<(f64, bool)> {
        pos.iter()
            .map(|&s| (s, true))
            .chain(neg.iter().map(|&s| (s, false)))
            .collect()
    }

    fn pair_count_auc(scores: &[(f64, bool)]) -> f64 {
        let mut correct = 0.0;
        let mut total = 0.0;
        for &(sp, lp) in scores {
            if !lp {
                continue;
            }
            for &(sn, ln) in scores {
                if ln {
                    continue;
                }
                total += 1.0;
                if sp > sn {
                    correct += 1.0;
                } else if sp == sn {
                    correct += 0.5;
                }
            }
        }
        correct / total
    }

    #[test]
    fn perfect_separation() {
        assert_eq!(roc(&pairs(&[0.9, 0.8], &[0.7, 0.1])).unwrap().auc, 1.0);
    }

    #[test]
    fn three_of_four_pairs() {
        let auc = roc(&pairs(&[0.8, 0.4], &[0.6, 0.2])).unwrap().auc;
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc(&pairs(&[0.3, 0.5], &[])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ties_count_half() {
        let auc = roc(&pairs(&[0.5], &[0.5])).unwrap().auc;
        assert!((auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shuffled_labels_are_chance_level() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let scores: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let mut labels: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        labels.shuffle(&mut rng);
        let data: Vec<_> = scores.into_iter().zip(labels).collect();
        let auc = roc(&data).unwrap().auc;
        assert!((0.45..=0.55).contains(&auc), "auc {auc}");
    }

    #[test]
    fn endpoints_and_monotonicity() {
        let c = roc(&pairs(&[0.8, 0.4, 0.4], &[0.6, 0.2, 0.4])).unwrap();
        assert_eq!(c.thresholds.first(), Some(&0.0));
        assert_eq!(c.thresholds.last(), Some(&1.0));
        assert_eq!(c.sensitivity[0], 1.0);
        assert_eq!(c.false_positive_rate[0], 1.0);
        for w in c.sensitivity.windows(2) {
            assert!(w[0] >= w[1]);
        }
        for w in c.false_positive_rate.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    proptest! {
        #[test]
        fn trapezoid_matches_pair_count(raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..200)) {
            // coarse scores so ties are common
            let data: Vec<(f64, bool)> = raw.iter().map(|&(s, l)| (s as f64 / 19.0, l)).collect();
            let pos = data.iter().filter(|d| d.1).count();
            prop_assume!(pos > 0 && pos < data.len());
            let auc = roc(&data).unwrap().auc;
            prop_assert!((auc - pair_count_auc(&data)).abs() < 1e-9);
        }

        #[test]
        fn order_does_not_matter(raw in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 2..100), seed in any::<u64>()) {
            let pos = raw.iter().filter(|d| d.1).count();
            prop_assume!(pos > 0 && pos < raw.len());
            let mut shuffled = raw.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(roc(&raw).unwrap(), roc(&shuffled).unwrap());
        }
    }
}
