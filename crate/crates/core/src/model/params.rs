use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::condition::ConditionKind;
use crate::error::{Error, Result};
use crate::imaging::DEFAULT_INPUT_SIZE;
use crate::prior::QuestionnaireSchema;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Values per box prediction: x offset, y offset, width, height, confidence.
pub const BOX_FIELDS: usize = 5;
pub const BOX_CHANNELS: usize = BOX_FIELDS * ConditionKind::LOCALIZED.len();
pub const CLASS_OUTPUTS: usize = ConditionKind::IMAGE_LEVEL.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub input_size: usize,
    /// Output channels of each 3x3 conv block.
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    /// Width of the per-cell hidden layer in both heads; 0 makes the heads linear.
    pub head_hidden: usize,
    pub leaky_slope: f64,
    /// Initial bias of the box confidence logits.
    pub conf_bias_init: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_size: DEFAULT_INPUT_SIZE,
            channels: vec![8, 16, 32, 32],
            strides: vec![2, 2, 2, 1],
            head_hidden: 32,
            leaky_slope: 0.1,
            conf_bias_init: -2.0,
        }
    }
}

impl ArchConfig {
    pub const KERNEL: usize = 3;

    pub fn grid(&self) -> usize {
        self.input_size / self.strides.iter().product::<usize>().max(1)
    }

    pub fn feature_channels(&self) -> usize {
        *self.channels.last().unwrap_or(&3)
    }

    /// Spatial edge of each conv block's output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut size = self.input_size;
        self.strides
            .iter()
            .map(|&s| {
                size = (size + 2 - Self::KERNEL) / s + 1;
                size
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::Config(
                "channels and strides must be non-empty and of equal length".into(),
            ));
        }
        if self.strides.iter().any(|&s| s == 0) || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("strides and channels must be positive".into()));
        }
        let total: usize = self.strides.iter().product();
        if self.input_size % total != 0 {
            return Err(Error::Config(format!(
                "input size {} is not divisible by total stride {total}",
                self.input_size
            )));
        }
        if *self.layer_sizes().last().unwrap() != self.grid() {
            return Err(Error::Config("stride schedule does not land on an integer grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Enhanced,
}

/// Weight matrix plus bias; conv kernels are stored flattened as
/// `(out, in * k * k)`, 1x1 layers as `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn he(out: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::normal(out, fan_in, (2.0 / fan_in as f64).sqrt(), rng)
    }

    fn normal(out: usize, fan_in: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        Dense {
            weight: Array2::from_shape_simple_fn((out, fan_in), || normal.sample(rng)),
            bias: Array1::zeros(out),
        }
    }

    fn zeros_like(&self) -> Self {
        Dense {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// A per-cell regression head: optional hidden layer, then the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub hidden: Option<Dense>,
    pub output: Dense,
}

impl Head {
    fn init(arch: &ArchConfig, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let feat = arch.feature_channels();
        if arch.head_hidden > 0 {
            Head {
                hidden: Some(Dense::he(arch.head_hidden, feat, rng)),
                output: Dense::normal(outputs, arch.head_hidden, 0.05, rng),
            }
        } else {
            Head {
                hidden: None,
                output: Dense::normal(outputs, feat, 0.05, rng),
            }
        }
    }

    /// Width of the layer that receives the fused prior channels.
    pub fn first_layer_width(&self) -> usize {
        match &self.hidden {
            Some(h) => h.weight.nrows(),
            None => self.output.weight.nrows(),
        }
    }

    fn zeros_like(&self) -> Self {
        Head {
            hidden: self.hidden.as_ref().map(Dense::zeros_like),
            output: self.output.zeros_like(),
        }
    }

    pub fn zero(&mut self) {
        if let Some(h) = self.hidden.as_mut() {
            h.weight.fill(0.0);
            h.bias.fill(0.0);
        }
        self.output.weight.fill(0.0);
        self.output.bias.fill(0.0);
    }
}

/// Weights from the pooled prior map into the first layer of each head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub box_prior: Array2<f64>,
    pub cls_prior: Array2<f64>,
}

/// Parameter groups; fine-tuning freezes [`ParamGroup::Backbone`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Backbone,
    Head,
    Fusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: ArchConfig,
    pub variant: Variant,
    /// Questionnaire the fusion weights were built for.
    pub questionnaire: QuestionnaireSchema,
    pub backbone: Vec<Dense>,
    pub box_head: Head,
    pub cls_head: Head,
    pub fusion: Option<Fusion>,
}

impl ModelParams {
    /// Fresh baseline parameters.
    pub fn init(arch: &ArchConfig, questionnaire: &QuestionnaireSchema, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_ch = 3;
        let mut backbone = Vec::with_capacity(arch.channels.len());
        for &out in &arch.channels {
            backbone.push(Dense::he(out, in_ch * ArchConfig::KERNEL * ArchConfig::KERNEL, &mut rng));
            in_ch = out;
        }
        let mut box_head = Head::init(arch, BOX_CHANNELS, &mut rng);
        for k in 0..ConditionKind::LOCALIZED.len() {
            box_head.output.bias[k * BOX_FIELDS + 4] = arch.conf_bias_init;
        }
        let cls_head = Head::init(arch, CLASS_OUTPUTS, &mut rng);
        Ok(ModelParams {
            arch: arch.clone(),
            variant: Variant::Baseline,
            questionnaire: questionnaire.clone(),
            backbone,
            box_head,
            cls_head,
            fusion: None,
        })
    }

    /// Enhanced parameters derived from a baseline: identical backbone and
    /// heads, zero-initialized fusion weights.
    pub fn to_enhanced(&self, questionnaire: &QuestionnaireSchema) -> Self {
        let depth = questionnaire.prior_depth();
        let mut out = self.clone();
        out.variant = Variant::Enhanced;
        out.questionnaire = questionnaire.clone();
        out.fusion = Some(Fusion {
            box_prior: Array2::zeros((self.box_head.first_layer_width(), depth)),
            cls_prior: Array2::zeros((self.cls_head.first_layer_width(), depth)),
        });
        out
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            arch: self.arch.clone(),
            variant: self.variant,
            questionnaire: self.questionnaire.clone(),
            backbone: self.backbone.iter().map(Dense::zeros_like).collect(),
            box_head: self.box_head.zeros_like(),
            cls_head: self.cls_head.zeros_like(),
            fusion: self.fusion.as_ref().map(|f| Fusion {
                box_prior: Array2::zeros(f.box_prior.raw_dim()),
                cls_prior: Array2::zeros(f.cls_prior.raw_dim()),
            }),
        }
    }

    /// All tensors as flat slices, in a fixed order shared with [`Self::slots_mut`].
    pub fn slots(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = Vec::new();
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        for l in &self.backbone {
            out.push((ParamGroup::Backbone, s2(&l.weight)));
            out.push((ParamGroup::Backbone, s1(&l.bias)));
        }
        for head in [&self.box_head, &self.cls_head] {
            if let Some(h) = &head.hidden {
                out.push((ParamGroup::Head, s2(&h.weight)));
                out.push((ParamGroup::Head, s1(&h.bias)));
            }
            out.push((ParamGroup::Head, s2(&head.output.weight)));
            out.push((ParamGroup::Head, s1(&head.output.bias)));
        }
        if let Some(f) = &self.fusion {
            out.push((ParamGroup::Fusion, s2(&f.box_prior)));
            out.push((ParamGroup::Fusion, s2(&f.cls_prior)));
        }
        out
    }

    pub fn slots_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<(ParamGroup, &mut [f64])> = Vec::new();
        for l in &mut self.backbone {
            out.push((ParamGroup::Backbone, l.weight.as_slice_mut().expect("standard layout")));
            out.push((ParamGroup::Backbone, l.bias.as_slice_mut().expect("standard layout")));
        }
        for head in [&mut self.box_head, &mut self.cls_head] {
            if let Some(h) = &mut head.hidden {
                out.push((ParamGroup::Head, h.weight.as_slice_mut().expect("standard layout")));
                out.push((ParamGroup::Head, h.bias.as_slice_mut().expect("standard layout")));
            }
            out.push((ParamGroup::Head, head.output.weight.as_slice_mut().expect("standard layout")));
            out.push((ParamGroup::Head, head.output.bias.as_slice_mut().expect("standard layout")));
        }
        if let Some(f) = &mut self.fusion {
            out.push((ParamGroup::Fusion, f.box_prior.as_slice_mut().expect("standard layout")));
            out.push((ParamGroup::Fusion, f.cls_prior.as_slice_mut().expect("standard layout")));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.slots().iter().map(|(_, s)| s.len()).sum()
    }

    /// Structural check against the embedded architecture.
    pub fn validate(&self) -> Result<()> {
        self.arch
            .validate()
            .map_err(|e| Error::CorruptParams(e.to_string()))?;
        let bad = |m: String| Err(Error::CorruptParams(m));
        if self.backbone.len() != self.arch.channels.len() {
            return bad(format!(
                "{} conv blocks for {} configured",
                self.backbone.len(),
                self.arch.channels.len()
            ));
        }
        let k2 = ArchConfig::KERNEL * ArchConfig::KERNEL;
        let mut in_ch = 3;
        for (i, (l, &out)) in self.backbone.iter().zip(&self.arch.channels).enumerate() {
            if l.weight.dim() != (out, in_ch * k2) || l.bias.len() != out {
                return bad(format!("conv block {i} has shape {:?}", l.weight.dim()));
            }
            in_ch = out;
        }
        let feat = self.arch.feature_channels();
        for (name, head, outputs) in [
            ("box head", &self.box_head, BOX_CHANNELS),
            ("class head", &self.cls_head, CLASS_OUTPUTS),
        ] {
            let out_in = match &head.hidden {
                Some(h) => {
                    if h.weight.ncols() != feat || h.bias.len() != h.weight.nrows() {
                        return bad(format!("{name} hidden layer shape {:?}", h.weight.dim()));
                    }
                    h.weight.nrows()
                }
                None => feat,
            };
            if head.output.weight.dim() != (outputs, out_in) || head.output.bias.len() != outputs {
                return bad(format!("{name} output shape {:?}", head.output.weight.dim()));
            }
        }
        match (self.variant, &self.fusion) {
            (Variant::Enhanced, None) => bad("enhanced parameters carry no fusion layers".into()),
            (Variant::Baseline, Some(_)) => bad("baseline parameters carry fusion layers".into()),
            (Variant::Enhanced, Some(f)) => {
                let depth = self.questionnaire.prior_depth();
                if f.box_prior.dim() != (self.box_head.first_layer_width(), depth)
                    || f.cls_prior.dim() != (self.cls_head.first_layer_width(), depth)
                {
                    return bad("fusion weights do not match heads and questionnaire".into());
                }
                Ok(())
            }
            (Variant::Baseline, None) => Ok(()),
        }
    }

    /// Backbone tensors only, for freeze checks.
    pub fn backbone_tensors(&self) -> Vec<&[f64]> {
        self.slots()
            .into_iter()
            .filter(|(g, _)| *g == ParamGroup::Backbone)
            .map(|(_, s)| s)
            .collect()
    }
}

/// Checkpoint file: parameters plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub variant: Variant,
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            variant: params.variant,
            config_hash: None,
            seed: None,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::CorruptParams(format!("{}: {e}", path.display())))?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::CorruptParams(format!(
                "unsupported checkpoint schema_version {}",
                ck.schema_version
            )));
        }
        if ck.variant != ck.params.variant {
            return Err(Error::CorruptParams("checkpoint variant flag disagrees with parameters".into()));
        }
        ck.params.validate()?;
        Ok(ck)
    }
}
