//! Adam training loop, baseline training and enhanced fine-tuning.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossBreakdown, LossConfig, Targets};
use super::network::{self, BackwardScope, Logits};
use super::params::{ArchConfig, ModelParams, ParamGroup, Variant};
use crate::dataset::{augment, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::prior::QuestionnaireSchema;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to 5% of it over the run.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Per-sample, per-epoch augmentation; `None` trains on raw samples.
    /// Written as `false` in config files so the choice survives a round trip.
    #[serde(with = "augment_repr")]
    pub augment: Option<AugmentConfig>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 16,
            learning_rate: 3e-3,
            schedule: LrSchedule::Cosine,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults for fine-tuning the heads of an enhanced model.
    pub fn fine_tune() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 2e-3,
            augment: None,
            ..TrainConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn rate_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = if self.epochs > 1 {
                    epoch as f64 / (self.epochs - 1) as f64
                } else {
                    0.0
                };
                let floor = 0.05;
                self.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
            }
        }
    }
}

mod augment_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::dataset::AugmentConfig;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Switch(bool),
        Ranges(AugmentConfig),
    }

    pub fn serialize<S: Serializer>(value: &Option<AugmentConfig>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(cfg) => Repr::Ranges(*cfg),
            None => Repr::Switch(false),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<AugmentConfig>, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Switch(false) => None,
            Repr::Switch(true) => Some(AugmentConfig::default()),
            Repr::Ranges(cfg) => Some(cfg),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
    pub holdout_localization: Option<f64>,
    pub holdout_classification: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub variant: Variant,
    pub seed: u64,
    pub initial_train_loss: f64,
    pub initial_holdout_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; `None` means the initial ones.
    pub best_epoch: Option<usize>,
}

impl TrainingLog {
    /// One JSON object per line: a header followed by the epoch records.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let header = serde_json::json!({
            "variant": self.variant,
            "seed": self.seed,
            "initial_train_loss": self.initial_train_loss,
            "initial_holdout_loss": self.initial_holdout_loss,
            "best_epoch": self.best_epoch,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for r in &self.epochs {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: TrainingLog,
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    step: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, cfg: &TrainConfig, frozen: &[ParamGroup]) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let slots = params.slots_mut();
        let g_slots = grads.slots();
        let m_slots = self.m.slots_mut();
        let v_slots = self.v.slots_mut();
        for (((group, p), (_, g)), ((_, m), (_, v))) in slots
            .into_iter()
            .zip(g_slots)
            .zip(m_slots.into_iter().zip(v_slots))
        {
            if frozen.contains(&group) {
                continue;
            }
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Backbone output and pooled priors for one sample, reused while the
/// backbone is frozen.
struct CachedFeatures {
    features: Array2<f64>,
    prior: Option<Array2<f64>>,
}

fn cache_features(params: &ModelParams, samples: &[Sample]) -> Result<Vec<CachedFeatures>> {
    samples
        .iter()
        .map(|s| {
            let input = network::prepare_input(params, &s.image)?;
            let prior = network::prepare_prior(params, s.priors.as_ref())?;
            let (_, features) = network::backbone_forward(params, input);
            Ok(CachedFeatures { features, prior })
        })
        .collect()
}

fn mix_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (epoch as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ (index as u64).wrapping_mul(0x94D0_49BB_1331_11EB)
}

fn add_loss(acc: &mut LossBreakdown, l: &LossBreakdown) {
    acc.localization += l.localization;
    acc.classification += l.classification;
    acc.total += l.total;
}

fn mean_loss(acc: LossBreakdown, n: usize) -> LossBreakdown {
    let n = n.max(1) as f64;
    LossBreakdown {
        localization: acc.localization / n,
        classification: acc.classification / n,
        total: acc.total / n,
    }
}

/// Mean loss over a sample set in inference mode.
pub fn evaluate_loss(params: &ModelParams, samples: &[Sample], config: &LossConfig) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown {
        localization: 0.0,
        classification: 0.0,
        total: 0.0,
    };
    let grid = params.arch.grid();
    for s in samples {
        let (logits, _) = network::forward_trace(params, &s.image, s.priors.as_ref())?;
        let (l, _) = loss_and_grad(&logits, &Targets::build(s, grid), config)?;
        add_loss(&mut acc, &l);
    }
    Ok(mean_loss(acc, samples.len()))
}

fn evaluate_cached(
    params: &ModelParams,
    cache: &[CachedFeatures],
    targets: &[Targets],
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown {
        localization: 0.0,
        classification: 0.0,
        total: 0.0,
    };
    for (c, t) in cache.iter().zip(targets) {
        let (logits, _, _) = network::heads_forward(params, &c.features, c.prior.as_ref());
        let (l, _) = loss_and_grad(&logits, t, config)?;
        add_loss(&mut acc, &l);
    }
    Ok(mean_loss(acc, cache.len()))
}

/// Loss of one sample and its gradient with respect to every parameter.
pub fn loss_gradient(params: &ModelParams, sample: &Sample, config: &LossConfig) -> Result<(LossBreakdown, ModelParams)> {
    let (logits, trace) = network::forward_trace(params, &sample.image, sample.priors.as_ref())?;
    let (l, d) = loss_and_grad(&logits, &Targets::build(sample, params.arch.grid()), config)?;
    let mut grads = params.zeros_like();
    network::backward(
        params,
        &trace,
        &d,
        &mut grads,
        BackwardScope {
            heads: true,
            backbone: true,
        },
    );
    Ok((l, grads))
}

fn scale_grads(grads: &mut ModelParams, factor: f64) {
    for (_, s) in grads.slots_mut() {
        for v in s.iter_mut() {
            *v *= factor;
        }
    }
}

fn optimize(
    mut params: ModelParams,
    train_set: &[Sample],
    holdout: &[Sample],
    config: &TrainConfig,
    freeze_backbone: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let grid = params.arch.grid();
    let frozen: Vec<ParamGroup> = if freeze_backbone {
        vec![ParamGroup::Backbone]
    } else {
        vec![]
    };
    // frozen backbone without augmentation: features never change
    let use_cache = freeze_backbone && config.augment.is_none();
    let train_targets: Vec<Targets> = train_set.iter().map(|s| Targets::build(s, grid)).collect();
    let holdout_targets: Vec<Targets> = holdout.iter().map(|s| Targets::build(s, grid)).collect();
    let (train_cache, holdout_cache) = if use_cache {
        (cache_features(&params, train_set)?, cache_features(&params, holdout)?)
    } else {
        (Vec::new(), Vec::new())
    };

    let eval_holdout = |p: &ModelParams| -> Result<Option<LossBreakdown>> {
        if holdout.is_empty() {
            Ok(None)
        } else if use_cache {
            evaluate_cached(p, &holdout_cache, &holdout_targets, &config.loss).map(Some)
        } else {
            evaluate_loss(p, holdout, &config.loss).map(Some)
        }
    };
    let eval_train = |p: &ModelParams| -> Result<LossBreakdown> {
        if use_cache {
            evaluate_cached(p, &train_cache, &train_targets, &config.loss)
        } else {
            evaluate_loss(p, train_set, &config.loss)
        }
    };

    let initial_train = eval_train(&params)?;
    let initial_holdout = eval_holdout(&params)?;
    let mut best_score = initial_holdout.map(|l| l.total).unwrap_or(f64::INFINITY);
    let mut best_params = params.clone();
    let mut best_epoch = None;
    let mut adam = Adam::new(&params);
    let mut records = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let scope = BackwardScope {
        heads: true,
        backbone: !freeze_backbone,
    };

    for epoch in 0..config.epochs {
        let lr = config.rate_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch, usize::MAX));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = params.zeros_like();
            for &idx in batch {
                let (l, d): (LossBreakdown, Logits) = if use_cache {
                    let c = &train_cache[idx];
                    let (logits, bt, ct) = network::heads_forward(&params, &c.features, c.prior.as_ref());
                    let (l, d) = loss_and_grad(&logits, &train_targets[idx], &config.loss)?;
                    network::heads_backward(
                        &params,
                        &c.features,
                        c.prior.as_ref(),
                        &bt,
                        &ct,
                        &d.boxes,
                        &d.class,
                        Some(&mut grads),
                    );
                    (l, d)
                } else {
                    let augmented;
                    let (sample, targets) = match &config.augment {
                        Some(aug) => {
                            augmented = augment(&train_set[idx], aug, mix_seed(config.seed, epoch, idx));
                            (&augmented, Targets::build(&augmented, grid))
                        }
                        None => (&train_set[idx], train_targets[idx].clone()),
                    };
                    let (logits, trace) = network::forward_trace(&params, &sample.image, sample.priors.as_ref())?;
                    let (l, d) = loss_and_grad(&logits, &targets, &config.loss)?;
                    network::backward(&params, &trace, &d, &mut grads, scope);
                    (l, d)
                };
                let _ = d;
                if !l.total.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training diverged at epoch {epoch}, sample {}",
                        train_set[idx].id
                    )));
                }
                epoch_loss += l.total;
            }
            scale_grads(&mut grads, 1.0 / batch.len() as f64);
            adam.update(&mut params, &grads, lr, config, &frozen);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Numeric(format!("training loss is {train_loss} after epoch {epoch}")));
        }
        let h = eval_holdout(&params)?;
        if let Some(h) = h {
            if h.total < best_score {
                best_score = h.total;
                best_params = params.clone();
                best_epoch = Some(epoch);
            }
        }
        tracing::debug!(epoch, train_loss, holdout = ?h.map(|l| l.total), "epoch done");
        records.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            holdout_loss: h.map(|l| l.total),
            holdout_localization: h.map(|l| l.localization),
            holdout_classification: h.map(|l| l.classification),
        });
    }
    if holdout.is_empty() {
        best_params = params;
        best_epoch = config.epochs.checked_sub(1);
    }
    Ok(TrainOutcome {
        log: TrainingLog {
            variant: best_params.variant,
            seed: config.seed,
            initial_train_loss: initial_train.total,
            initial_holdout_loss: initial_holdout.map(|l| l.total),
            epochs: records,
            best_epoch,
        },
        params: best_params,
    })
}

/// Train a baseline model from scratch. `holdout` only drives the choice of
/// which epoch's parameters to return.
pub fn train(
    arch: &ArchConfig,
    questionnaire: &QuestionnaireSchema,
    train_set: &[Sample],
    holdout: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = ModelParams::init(arch, questionnaire, config.seed)?;
    optimize(params, train_set, holdout, config, false)
}

/// Continue training from given parameters with every group trainable.
pub fn train_from(
    params: ModelParams,
    train_set: &[Sample],
    holdout: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    params.validate()?;
    optimize(params, train_set, holdout, config, false)
}

/// Derive an enhanced model from a trained baseline: fusion weights start at
/// zero, the backbone stays frozen, and only head and fusion weights move.
pub fn fine_tune_enhanced(
    baseline: &ModelParams,
    questionnaire: &QuestionnaireSchema,
    train_set: &[Sample],
    holdout: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    baseline.validate()?;
    if baseline.variant != Variant::Baseline {
        return Err(Error::Config("fine-tuning starts from baseline parameters".into()));
    }
    questionnaire.validate()?;
    if let Some(s) = train_set.iter().find(|s| s.priors.is_none()) {
        return Err(Error::MissingPriors(format!(
            "training sample {} has no prior profile",
            s.id
        )));
    }
    let params = baseline.to_enhanced(questionnaire);
    optimize(params, train_set, holdout, config, true)
}
