//! On-disk dataset layout:
//!
//! ```text
//! <dir>/annotations.json     schema_version, image_size, one record per sample
//! <dir>/images/<id>.png      8-bit RGB image
//! <dir>/masks/<id>.png       symptom mask (red = pain, green = bleeding), if priors exist
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ImageLabels, PlantedRegion, Sample};
use crate::condition::{BoundingBox, ConditionKind};
use crate::error::{Error, Result};
use crate::imaging::OralImage;
use crate::prior::{PriorProfile, SYMPTOM_CHANNELS};

pub const DATASET_SCHEMA_VERSION: u32 = 1;
const ANNOTATIONS: &str = "annotations.json";

#[derive(Debug, Serialize, Deserialize)]
struct BoxRecord {
    condition: ConditionKind,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct PriorRecord {
    answers: Vec<usize>,
    symptom_mask: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    id: String,
    person_id: String,
    image: String,
    boxes: Vec<BoxRecord>,
    labels: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    regions: Vec<PlantedRegion>,
    #[serde(default)]
    priors: Option<PriorRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationFile {
    schema_version: u32,
    image_size: Option<usize>,
    samples: Vec<Value>,
}

fn mask_to_png(mask: &Array3<u8>) -> image::RgbImage {
    let (h, w, _) = mask.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([mask[[y, x, 0]] * 255, mask[[y, x, 1]] * 255, 0])
    })
}

fn mask_from_png(img: &image::RgbImage) -> Array3<u8> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, SYMPTOM_CHANNELS), |(y, x, c)| {
        (img.get_pixel(x as u32, y as u32).0[c] >= 128) as u8
    })
}

pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
    fs::create_dir_all(dir.join("masks")).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let image_rel = format!("images/{}.png", s.id);
        s.image.save_png(&dir.join(&image_rel))?;
        let priors = match &s.priors {
            Some(p) => {
                let rel = format!("masks/{}.png", s.id);
                mask_to_png(&p.symptom_mask).save(dir.join(&rel))?;
                Some(PriorRecord {
                    answers: p.answers.clone(),
                    symptom_mask: rel,
                })
            }
            None => None,
        };
        let record = SampleRecord {
            id: s.id.clone(),
            person_id: s.person_id.clone(),
            image: image_rel,
            boxes: s
                .boxes
                .iter()
                .map(|b| BoxRecord {
                    condition: b.condition,
                    cx: b.cx,
                    cy: b.cy,
                    w: b.w,
                    h: b.h,
                })
                .collect(),
            labels: ConditionKind::IMAGE_LEVEL
                .iter()
                .map(|c| (c.as_str().to_string(), s.labels.get(*c) as u8 as f64))
                .collect(),
            regions: s.regions.clone(),
            priors,
        };
        records.push(serde_json::to_value(record)?);
    }
    let file = AnnotationFile {
        schema_version: DATASET_SCHEMA_VERSION,
        image_size: samples.first().map(|s| s.image.height()),
        samples: records,
    };
    let path = dir.join(ANNOTATIONS);
    fs::write(&path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(&path, e))
}

fn parse_err(record: &str, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        record: record.to_string(),
        field: field.into(),
        message: message.into(),
    }
}

fn parse_record(dir: &Path, index: usize, value: Value) -> Result<Sample> {
    let name = value
        .get("id")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| format!("#{index}"));
    let rec: SampleRecord = serde_json::from_value(value).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .unwrap_or("<record>")
            .to_string();
        parse_err(&name, field, msg)
    })?;

    let mut labels = ImageLabels::default();
    for (key, v) in &rec.labels {
        let field = format!("labels.{key}");
        let condition = ConditionKind::parse(key)
            .filter(|c| !c.is_localized())
            .ok_or_else(|| parse_err(&name, &field, "not an image-level condition"))?;
        let flag = match *v {
            x if x == 0.0 => false,
            x if x == 1.0 => true,
            x => return Err(parse_err(&name, &field, format!("label value {x} is not 0 or 1"))),
        };
        labels.set(condition, flag);
    }

    let mut boxes = Vec::with_capacity(rec.boxes.len());
    for (k, b) in rec.boxes.iter().enumerate() {
        let bb = BoundingBox {
            cx: b.cx,
            cy: b.cy,
            w: b.w,
            h: b.h,
            confidence: 1.0,
            condition: b.condition,
        };
        bb.validate().map_err(|e| match e {
            Error::Validation { field, message } => parse_err(&name, format!("boxes[{k}].{field}"), message),
            other => parse_err(&name, format!("boxes[{k}].condition"), other.to_string()),
        })?;
        boxes.push(bb);
    }

    let image = OralImage::load_png(&dir.join(&rec.image), rec.id.clone(), rec.person_id.clone())
        .map_err(|e| parse_err(&name, "image", e.to_string()))?;
    let priors = match rec.priors {
        Some(p) => {
            let img = image::open(dir.join(&p.symptom_mask))
                .map_err(|e| parse_err(&name, "priors.symptom_mask", e.to_string()))?
                .to_rgb8();
            Some(PriorProfile {
                answers: p.answers,
                symptom_mask: mask_from_png(&img),
            })
        }
        None => None,
    };
    Ok(Sample {
        id: rec.id,
        image,
        boxes,
        labels,
        regions: rec.regions,
        priors,
        person_id: rec.person_id,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let path = dir.join(ANNOTATIONS);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: AnnotationFile = serde_json::from_str(&text)
        .map_err(|e| parse_err(ANNOTATIONS, "<file>", e.to_string()))?;
    if file.schema_version != DATASET_SCHEMA_VERSION {
        return Err(parse_err(
            ANNOTATIONS,
            "schema_version",
            format!("unsupported version {}", file.schema_version),
        ));
    }
    file.samples
        .into_iter()
        .enumerate()
        .map(|(i, v)| parse_record(dir, i, v))
        .collect()
}
