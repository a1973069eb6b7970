//! Deterministic generator of synthetic oral-cavity images.
//!
//! Each image is a pink "gum" field with a band of off-white "teeth". Planted
//! conditions use fixed signatures:
//!
//! | condition           | rendering                                        |
//! |---------------------|--------------------------------------------------|
//! | periodontal_disease | dark red horizontal ellipse (2:1)                 |
//! | caries              | near-black disk                                   |
//! | dental_calculus     | yellow axis-aligned square                        |
//! | soft_deposit        | cream speckle over a rectangular region           |
//! | discoloration       | brown multiplicative tint over a rectangular region |
//!
//! Localized conditions get a ground-truth box that tightly encloses the
//! painted pixels. Image-level conditions record the painted rectangle.

use std::collections::BTreeMap;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImageLabels, PlantedRegion, Sample};
use crate::condition::{BoundingBox, ConditionKind};
use crate::error::{Error, Result};
use crate::imaging::{FracRect, OralImage, DEFAULT_INPUT_SIZE};
use crate::prior::{rasterize_strokes, PriorProfile, QuestionnaireSchema, Stroke, SymptomKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternStyle {
    Ellipse,
    Disk,
    Square,
    Speckle,
    Tint,
}

/// The (shape, color) signature painted for each condition.
pub fn signature(condition: ConditionKind) -> (PatternStyle, [f64; 3]) {
    match condition {
        ConditionKind::PeriodontalDisease => (PatternStyle::Ellipse, [0.55, 0.04, 0.10]),
        ConditionKind::Caries => (PatternStyle::Disk, [0.12, 0.07, 0.04]),
        ConditionKind::DentalCalculus => (PatternStyle::Square, [0.92, 0.78, 0.12]),
        ConditionKind::SoftDeposit => (PatternStyle::Speckle, [0.95, 0.85, 0.45]),
        ConditionKind::Discoloration => (PatternStyle::Tint, [0.95, 0.70, 0.38]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionPlacement {
    /// Anywhere in the frame.
    Random,
    /// Confined to the left half of the frame.
    LeftHalf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub image_size: usize,
    pub persons: usize,
    pub images_per_person: usize,
    pub prevalence: BTreeMap<ConditionKind, f64>,
    /// Edge length of localized patterns as a fraction of the image.
    pub pattern_size: (f64, f64),
    /// Blend strength of every planted pattern.
    pub contrast: (f64, f64),
    pub max_instances: usize,
    /// Side length of image-level regions as a fraction of the image.
    pub region_size: (f64, f64),
    pub region_placement: RegionPlacement,
    /// Fraction of speckle pixels inside a soft-deposit region.
    pub speckle_density: f64,
    /// Probability that a prior channel agrees with the ground truth.
    pub prior_informativeness: f64,
    /// Fraction of samples that carry a prior profile.
    pub prior_fraction: f64,
    /// Per-pixel gaussian noise standard deviation.
    pub noise: f64,
    pub brush_radius: f64,
    pub questionnaire: QuestionnaireSchema,
    /// Question whose answer carries each condition's prior signal.
    pub prior_links: BTreeMap<ConditionKind, usize>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let schema = QuestionnaireSchema::default();
        let link = |id: &str| schema.question_index(id).expect("default schema question");
        let prior_links = BTreeMap::from([
            (ConditionKind::PeriodontalDisease, link("bleeding_history")),
            (ConditionKind::Caries, link("pain_history")),
            (ConditionKind::DentalCalculus, link("last_dental_visit")),
            (ConditionKind::SoftDeposit, link("brushing_frequency")),
            (ConditionKind::Discoloration, link("smoking")),
        ]);
        SyntheticConfig {
            image_size: DEFAULT_INPUT_SIZE,
            persons: 175,
            images_per_person: 4,
            prevalence: ConditionKind::ALL.into_iter().map(|c| (c, 0.5)).collect(),
            pattern_size: (0.09, 0.18),
            contrast: (0.15, 0.85),
            max_instances: 2,
            region_size: (0.35, 0.6),
            region_placement: RegionPlacement::Random,
            speckle_density: 0.4,
            prior_informativeness: 0.7,
            prior_fraction: 1.0,
            noise: 0.06,
            brush_radius: 1.5,
            questionnaire: schema,
            prior_links,
        }
    }
}

impl SyntheticConfig {
    pub fn sample_count(&self) -> usize {
        self.persons * self.images_per_person
    }

    pub fn with_prevalence(mut self, value: f64) -> Self {
        for c in ConditionKind::ALL {
            self.prevalence.insert(c, value);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if v.is_finite() && (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} is outside [0, 1]")))
            }
        };
        for c in ConditionKind::ALL {
            let p = self
                .prevalence
                .get(&c)
                .ok_or_else(|| Error::Config(format!("prevalence for {c} missing")))?;
            unit(&format!("prevalence.{c}"), *p)?;
        }
        unit("prior_informativeness", self.prior_informativeness)?;
        unit("prior_fraction", self.prior_fraction)?;
        unit("speckle_density", self.speckle_density)?;
        for (name, (lo, hi)) in [
            ("pattern_size", self.pattern_size),
            ("contrast", self.contrast),
            ("region_size", self.region_size),
        ] {
            unit(name, lo)?;
            unit(name, hi)?;
            if lo > hi {
                return Err(Error::Config(format!("{name} range is inverted")));
            }
        }
        if self.image_size < 8 {
            return Err(Error::Config("image_size must be at least 8".into()));
        }
        if self.persons == 0 || self.images_per_person == 0 {
            return Err(Error::Config("persons and images_per_person must be positive".into()));
        }
        if self.max_instances == 0 {
            return Err(Error::Config("max_instances must be positive".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        self.questionnaire.validate()?;
        for (c, &q) in &self.prior_links {
            if q >= self.questionnaire.questions.len() {
                return Err(Error::Config(format!("prior link for {c} points at missing question {q}")));
            }
        }
        Ok(())
    }
}

fn rng_for(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    // splitmix-style mixing keeps neighbouring indices decorrelated
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    let mut rng = ChaCha8Rng::seed_from_u64(z ^ (z >> 31));
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

struct PersonLook {
    gum: [f64; 3],
    tooth: [f64; 3],
    band: (f64, f64),
    tooth_width: f64,
    tooth_phase: f64,
}

impl PersonLook {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let g = rng.random_range(-1.0..1.0);
        let t = rng.random_range(-1.0..1.0);
        let top = rng.random_range(0.28..0.38);
        let bottom = rng.random_range(0.62..0.72);
        PersonLook {
            gum: [0.80 + 0.06 * g, 0.42 + 0.05 * g, 0.45 + 0.04 * g],
            tooth: [0.86 + 0.04 * t, 0.84 + 0.04 * t, 0.78 + 0.04 * t],
            band: (top, bottom),
            tooth_width: rng.random_range(0.12..0.18),
            tooth_phase: rng.random_range(0.0..1.0),
        }
    }
}

fn paint_background(look: &PersonLook, size: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let gx = rng.random_range(-0.12..0.12);
    let gy = rng.random_range(-0.12..0.12);
    let jitter = rng.random_range(-0.03..0.03);
    let (top, bottom) = (look.band.0 + jitter, look.band.1 + jitter);
    Array3::from_shape_fn((size, size, 3), |(y, x, c)| {
        let fx = (x as f64 + 0.5) / size as f64;
        let fy = (y as f64 + 0.5) / size as f64;
        let mut v = if fy >= top && fy <= bottom {
            let phase = (fx / look.tooth_width + look.tooth_phase).fract();
            if phase < 0.08 {
                look.tooth[c] * 0.7
            } else {
                look.tooth[c]
            }
        } else {
            look.gum[c]
        };
        v *= 1.0 + gx * (fx - 0.5) + gy * (fy - 0.5);
        v
    })
}

fn blend(px: &mut Array3<f64>, y: usize, x: usize, color: [f64; 3], alpha: f64) {
    for c in 0..3 {
        px[[y, x, c]] = px[[y, x, c]] * (1.0 - alpha) + color[c] * alpha;
    }
}

/// Paint one localized pattern and return its tight box, or `None` if no
/// pixel was covered.
fn plant_localized(
    px: &mut Array3<f64>,
    condition: ConditionKind,
    config: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> Option<BoundingBox> {
    let n = px.shape()[0];
    let nf = n as f64;
    let (style, color) = signature(condition);
    let size = uniform(rng, config.pattern_size).max(2.5 / nf);
    let alpha = uniform(rng, config.contrast);
    let (half_w, half_h) = match style {
        PatternStyle::Ellipse => (size * 0.75, size * 0.375),
        _ => (size / 2.0, size / 2.0),
    };
    let cx = rng.random_range(half_w.max(0.05)..(1.0 - half_w).min(0.95));
    let cy = rng.random_range(half_h.max(0.05)..(1.0 - half_h).min(0.95));
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for y in 0..n {
        let fy = (y as f64 + 0.5) / nf;
        for x in 0..n {
            let fx = (x as f64 + 0.5) / nf;
            let (dx, dy) = ((fx - cx) / half_w, (fy - cy) / half_h);
            let inside = match style {
                PatternStyle::Square => dx.abs() <= 1.0 && dy.abs() <= 1.0,
                _ => dx * dx + dy * dy <= 1.0,
            };
            if inside {
                blend(px, y, x, color, alpha);
                bounds = Some(match bounds {
                    None => (x, x, y, y),
                    Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
                });
            }
        }
    }
    let (x0, x1, y0, y1) = bounds?;
    let (fx0, fx1) = (x0 as f64 / nf, (x1 + 1) as f64 / nf);
    let (fy0, fy1) = (y0 as f64 / nf, (y1 + 1) as f64 / nf);
    Some(BoundingBox {
        cx: (fx0 + fx1) / 2.0,
        cy: (fy0 + fy1) / 2.0,
        w: fx1 - fx0,
        h: fy1 - fy0,
        confidence: 1.0,
        condition,
    })
}

fn plant_region(
    px: &mut Array3<f64>,
    condition: ConditionKind,
    config: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> FracRect {
    let n = px.shape()[0];
    let (_, color) = signature(condition);
    let w = uniform(rng, config.region_size);
    let h = uniform(rng, config.region_size);
    let (xmin, xmax) = match config.region_placement {
        RegionPlacement::Random => (0.0, 1.0),
        RegionPlacement::LeftHalf => (0.0, 0.5),
    };
    let w = w.min(xmax - xmin);
    let x0 = uniform(rng, (xmin, xmax - w));
    let y0 = uniform(rng, (0.0, 1.0 - h));
    let rect = FracRect::new(x0, y0, x0 + w, y0 + h);
    let alpha = uniform(rng, config.contrast);
    let mask = rect.mask(n, n);
    for ((y, x), inside) in mask.indexed_iter() {
        if !*inside {
            continue;
        }
        match condition {
            ConditionKind::SoftDeposit => {
                if rng.random::<f64>() < config.speckle_density {
                    blend(px, y, x, color, alpha);
                }
            }
            _ => {
                for c in 0..3 {
                    let tinted = px[[y, x, c]] * color[c];
                    px[[y, x, c]] = px[[y, x, c]] * (1.0 - alpha) + tinted * alpha;
                }
            }
        }
    }
    rect
}

fn linked_answer(
    config: &SyntheticConfig,
    question: usize,
    positive: bool,
    rng: &mut ChaCha8Rng,
) -> usize {
    let choices = config.questionnaire.questions[question].choices.len();
    if rng.random::<f64>() < config.prior_informativeness {
        if positive {
            choices - 1
        } else {
            0
        }
    } else {
        rng.random_range(0..choices)
    }
}

fn random_stroke(kind: SymptomKind, rng: &mut ChaCha8Rng) -> Stroke {
    let x = rng.random_range(0.1..0.9);
    let y = rng.random_range(0.1..0.9);
    let dx = rng.random_range(-0.08..0.08);
    Stroke {
        kind,
        points: vec![[x, y], [(x + dx).clamp(0.0, 1.0), y]],
    }
}

fn stroke_through(kind: SymptomKind, b: &BoundingBox) -> Stroke {
    Stroke {
        kind,
        points: vec![
            [(b.cx - b.w / 3.0).clamp(0.0, 1.0), b.cy],
            [(b.cx + b.w / 3.0).clamp(0.0, 1.0), b.cy],
        ],
    }
}

fn draw_priors(
    config: &SyntheticConfig,
    boxes: &[BoundingBox],
    labels: &ImageLabels,
    rng: &mut ChaCha8Rng,
) -> Result<PriorProfile> {
    let schema = &config.questionnaire;
    let mut answers: Vec<usize> = schema
        .questions
        .iter()
        .map(|q| rng.random_range(0..q.choices.len()))
        .collect();
    let positive = |c: ConditionKind| {
        if c.is_localized() {
            boxes.iter().any(|b| b.condition == c)
        } else {
            labels.get(c)
        }
    };
    for c in ConditionKind::ALL {
        if let Some(&q) = config.prior_links.get(&c) {
            answers[q] = linked_answer(config, q, positive(c), rng);
        }
    }
    let mut strokes = Vec::new();
    for (c, kind) in [
        (ConditionKind::Caries, SymptomKind::Pain),
        (ConditionKind::PeriodontalDisease, SymptomKind::Bleeding),
    ] {
        let agrees = rng.random::<f64>() < config.prior_informativeness;
        let first = boxes.iter().find(|b| b.condition == c);
        match (agrees, first) {
            (true, Some(b)) => strokes.push(stroke_through(kind, b)),
            (true, None) => {}
            (false, _) => {
                if rng.random::<f64>() < 0.5 {
                    strokes.push(random_stroke(kind, rng));
                }
            }
        }
    }
    let n = config.image_size;
    let mask = rasterize_strokes(&strokes, n, n, config.brush_radius)?;
    PriorProfile::new(answers, mask, schema)
}

fn generate_one(config: &SyntheticConfig, seed: u64, index: usize, look: &PersonLook, person: usize) -> Result<Sample> {
    let n = config.image_size;
    let mut rng = rng_for(seed, index as u64, 0);
    let mut px = paint_background(look, n, &mut rng);

    let mut labels = ImageLabels::default();
    let mut regions = Vec::new();
    for c in ConditionKind::IMAGE_LEVEL {
        if rng.random::<f64>() < config.prevalence[&c] {
            labels.set(c, true);
            let rect = plant_region(&mut px, c, config, &mut rng);
            regions.push(PlantedRegion { condition: c, rect });
        }
    }

    let mut boxes = Vec::new();
    for c in ConditionKind::LOCALIZED {
        if rng.random::<f64>() < config.prevalence[&c] {
            let count = rng.random_range(1..=config.max_instances);
            for _ in 0..count {
                if let Some(b) = plant_localized(&mut px, c, config, &mut rng) {
                    boxes.push(b);
                }
            }
        }
    }

    if config.noise > 0.0 {
        let normal = Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
        px.mapv_inplace(|v| v + normal.sample(&mut rng));
    }
    let person_id = format!("person-{person:04}");
    let id = format!("s{index:05}");
    let mut image = OralImage {
        pixels: px,
        source_id: id.clone(),
        person_id: person_id.clone(),
    };
    image.quantize();

    let mut prior_rng = rng_for(seed, index as u64, 1);
    let priors = if prior_rng.random::<f64>() < config.prior_fraction {
        Some(draw_priors(config, &boxes, &labels, &mut prior_rng)?)
    } else {
        None
    };

    Ok(Sample {
        id,
        image,
        boxes,
        labels,
        regions,
        priors,
        person_id,
    })
}

/// Generate `persons * images_per_person` samples. Same `(config, seed)`,
/// same dataset. Image content does not depend on the prior settings, so
/// datasets differing only in `prior_informativeness` share pixels and labels.
pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.sample_count());
    for person in 0..config.persons {
        let look = PersonLook::draw(&mut rng_for(seed, person as u64, 2));
        for k in 0..config.images_per_person {
            let index = person * config.images_per_person + k;
            out.push(generate_one(config, seed, index, &look, person)?);
        }
    }
    Ok(out)
}
