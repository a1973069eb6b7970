use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::{Error, Result};

/// Person-disjoint split. Persons are shuffled with `seed` and the first
/// `round(persons * train_fraction)` of them go to the training side.
pub fn split(samples: Vec<Sample>, train_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} is outside [0, 1]"
        )));
    }
    if let Some(s) = samples.iter().find(|s| s.person_id.is_empty()) {
        return Err(Error::Validation {
            field: "person_id".into(),
            message: format!("sample {} has no person id", s.id),
        });
    }
    let mut persons: Vec<String> = samples
        .iter()
        .map(|s| s.person_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let interior = train_fraction > 0.0 && train_fraction < 1.0;
    if interior && persons.len() < 2 {
        return Err(Error::CannotSplit(format!(
            "{} person(s) cannot be divided at fraction {train_fraction}",
            persons.len()
        )));
    }
    persons.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_train = (persons.len() as f64 * train_fraction).round() as usize;
    if interior {
        n_train = n_train.clamp(1, persons.len() - 1);
    }
    let train_persons: HashSet<&String> = persons[..n_train].iter().collect();
    let (train, test): (Vec<_>, Vec<_>) = samples
        .into_iter()
        .partition(|s| train_persons.contains(&s.person_id));
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, SyntheticConfig};
    use proptest::prelude::*;

    fn persons(n: usize, per: usize) -> Vec<Sample> {
        let config = SyntheticConfig {
            persons: n,
            images_per_person: per,
            image_size: 16,
            ..SyntheticConfig::default()
        };
        generate(&config, 0).unwrap()
    }

    fn person_set(samples: &[Sample]) -> HashSet<String> {
        samples.iter().map(|s| s.person_id.clone()).collect()
    }

    #[test]
    fn ten_persons_at_point_eight() {
        let (train, test) = split(persons(10, 2), 0.8, 1).unwrap();
        assert_eq!(person_set(&train).len(), 8);
        assert_eq!(person_set(&test).len(), 2);
        assert_eq!(train.len(), 16);
        assert!(person_set(&train).is_disjoint(&person_set(&test)));
    }

    #[test]
    fn full_fraction_leaves_test_empty() {
        let (train, test) = split(persons(5, 2), 1.0, 1).unwrap();
        assert_eq!(train.len(), 10);
        assert!(test.is_empty());
    }

    #[test]
    fn single_person_cannot_be_split() {
        assert!(matches!(split(persons(1, 3), 0.5, 1), Err(Error::CannotSplit(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn split_is_person_disjoint(seed in any::<u64>(), frac in 0.0f64..=1.0) {
            let (train, test) = split(persons(12, 3), frac, seed).unwrap();
            prop_assert!(person_set(&train).is_disjoint(&person_set(&test)));
            prop_assert_eq!(train.len() + test.len(), 36);
            let expected = 12.0 * frac;
            prop_assert!((person_set(&train).len() as f64 - expected).abs() <= 1.0);
        }
    }
}
