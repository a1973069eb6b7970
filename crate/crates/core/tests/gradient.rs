//! Finite-difference checks of the analytic loss gradient.

use oralscan_core::dataset::{generate, Sample, SyntheticConfig};
use oralscan_core::model::{loss_gradient, ArchConfig, LossConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample() -> Sample {
    let cfg = SyntheticConfig {
        image_size: 16,
        persons: 3,
        images_per_person: 1,
        ..SyntheticConfig::default()
    }
    .with_prevalence(1.0);
    generate(&cfg, 9).unwrap().remove(0)
}

fn nudge(params: &ModelParams, index: usize, delta: f64) -> ModelParams {
    let mut p = params.clone();
    let mut offset = index;
    for (_, slot) in p.slots_mut() {
        if offset < slot.len() {
            slot[offset] += delta;
            break;
        }
        offset -= slot.len();
    }
    p
}

/// Largest relative error over every coordinate.
fn worst_error(params: &ModelParams, sample: &Sample) -> f64 {
    let cfg = LossConfig::default();
    let (_, grads) = loss_gradient(params, sample, &cfg).unwrap();
    let analytic: Vec<f64> = grads.slots().iter().flat_map(|(_, s)| s.to_vec()).collect();
    let h = 1e-5;
    let loss = |p: &ModelParams| loss_gradient(p, sample, &cfg).unwrap().0.total;
    (0..params.parameter_count())
        .map(|k| {
            let numeric = (loss(&nudge(params, k, h)) - loss(&nudge(params, k, -h))) / (2.0 * h);
            (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6)
        })
        .fold(0.0, f64::max)
}

fn arch(head_hidden: usize) -> ArchConfig {
    ArchConfig {
        input_size: 16,
        channels: vec![3, 4],
        strides: vec![2, 2],
        head_hidden,
        ..ArchConfig::default()
    }
}

#[test]
fn baseline_gradient_matches_differences() {
    let s = sample();
    let params = ModelParams::init(&arch(4), &SyntheticConfig::default().questionnaire, 1).unwrap();
    let err = worst_error(&params, &s);
    assert!(err < 1e-3, "worst relative error {err:.3e}");
}

#[test]
fn linear_heads_with_fusion_gradient_matches_differences() {
    let s = sample();
    let schema = SyntheticConfig::default().questionnaire;
    let mut params = ModelParams::init(&arch(0), &schema, 2).unwrap().to_enhanced(&schema);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = params.fusion.as_mut().unwrap();
    f.box_prior.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    f.cls_prior.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let err = worst_error(&params, &s);
    assert!(err < 1e-3, "worst relative error {err:.3e}");
}
