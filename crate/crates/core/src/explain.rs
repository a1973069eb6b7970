//! Grad-CAM heatmaps for the image-level conditions and the pointing game
//! used to score them against planted regions.

use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::condition::ConditionKind;
use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, FracRect, OralImage};
use crate::model::network::{self, Logits};
use crate::model::{ModelParams, BOX_CHANNELS};
use crate::prior::PriorProfile;

/// Relevance map at input resolution, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub condition: ConditionKind,
    pub values: Array2<f64>,
    /// Range of the rectified map before normalization.
    pub raw_min: f64,
    pub raw_max: f64,
    pub layer: usize,
}

/// What goes next to the PNG so the 8-bit values can be interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSidecar {
    pub condition: ConditionKind,
    pub height: usize,
    pub width: usize,
    pub layer: usize,
    pub raw_min: f64,
    pub raw_max: f64,
    pub argmax: [usize; 2],
}

/// Min-max normalize to `[0, 1]`; a constant map becomes all zeros.
/// Returns the map with the original bounds.
pub fn normalize(map: &Array2<f64>) -> (Array2<f64>, f64, f64) {
    let min = map.iter().copied().fold(f64::INFINITY, f64::min);
    let max = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if map.is_empty() || !(max - min > f64::EPSILON * max.abs().max(1.0)) {
        return (Array2::zeros(map.raw_dim()), min, max);
    }
    let span = max - min;
    (map.mapv(|v| ((v - min) / span).clamp(0.0, 1.0)), min, max)
}

/// Heatmap from the last backbone block.
pub fn grad_cam(
    params: &ModelParams,
    image: &OralImage,
    profile: Option<&PriorProfile>,
    condition: ConditionKind,
) -> Result<Heatmap> {
    grad_cam_at(params, image, profile, condition, params.arch.channels.len() - 1)
}

/// Heatmap from backbone block `layer`.
pub fn grad_cam_at(
    params: &ModelParams,
    image: &OralImage,
    profile: Option<&PriorProfile>,
    condition: ConditionKind,
    layer: usize,
) -> Result<Heatmap> {
    condition.require_image_level()?;
    if layer >= params.arch.channels.len() {
        return Err(Error::Config(format!(
            "CAM layer {layer} out of range, backbone has {} blocks",
            params.arch.channels.len()
        )));
    }
    let (_, trace) = network::forward_trace(params, image, profile)?;
    let cells = trace.features.ncols();
    let mut class = Array1::zeros(2);
    class[condition.head_index()] = 1.0;
    let seed = Logits {
        boxes: Array2::zeros((BOX_CHANNELS, cells)),
        class,
    };
    let (act, grad) = network::layer_activation_and_grad(params, &trace, layer, &seed);
    let weights = grad.mean_axis(Axis(1)).and_then(|g| g.mean_axis(Axis(1))).expect("non-empty map");
    let (_, side, _) = act.dim();
    let mut cam = Array2::<f64>::zeros((side, side));
    for (k, a) in act.outer_iter().enumerate() {
        cam.scaled_add(weights[k], &a);
    }
    cam.mapv_inplace(|v| v.max(0.0));

    let (h, w) = (image.height(), image.width());
    let cam3: Array3<f64> = cam.insert_axis(Axis(2));
    let up = resize_bilinear(&cam3.view(), h, w).remove_axis(Axis(2));
    let (values, raw_min, raw_max) = normalize(&up);
    Ok(Heatmap {
        condition,
        values,
        raw_min,
        raw_max,
        layer,
    })
}

impl Heatmap {
    /// Row-major position of the first maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for ((r, c), &v) in self.values.indexed_iter() {
            if v > best_v {
                best_v = v;
                best = (r, c);
            }
        }
        best
    }

    pub fn to_gray8(&self) -> image::GrayImage {
        let (h, w) = self.values.dim();
        image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([(self.values[[y as usize, x as usize]] * 255.0).round() as u8])
        })
    }

    pub fn sidecar(&self) -> HeatmapSidecar {
        let (height, width) = self.values.dim();
        let (r, c) = self.argmax();
        HeatmapSidecar {
            condition: self.condition,
            height,
            width,
            layer: self.layer,
            raw_min: self.raw_min,
            raw_max: self.raw_max,
            argmax: [r, c],
        }
    }

    /// Write `<path>` as an 8-bit grayscale PNG and `<path>.json` beside it.
    pub fn save(&self, png_path: &Path) -> Result<()> {
        self.to_gray8().save(png_path)?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        let side = png_path.with_extension("json");
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }
}

/// Hit when the heatmap's argmax pixel lies in `region`.
pub fn pointing_game(heatmap: &Heatmap, region: &Array2<bool>) -> Result<bool> {
    if region.dim() != heatmap.values.dim() {
        return Err(Error::Shape(format!(
            "region {:?} does not match heatmap {:?}",
            region.dim(),
            heatmap.values.dim()
        )));
    }
    Ok(region[heatmap.argmax()])
}

pub fn pointing_game_rect(heatmap: &Heatmap, rect: &FracRect) -> bool {
    let (h, w) = heatmap.values.dim();
    rect.mask(h, w)[heatmap.argmax()]
}
