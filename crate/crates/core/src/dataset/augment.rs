use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PlantedRegion, Sample};
use crate::condition::BoundingBox;
use crate::imaging::{sample_bilinear, FracRect};

/// Jitter ranges. Every draw is symmetric around the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Max translation per axis, fraction of the frame.
    pub shift: f64,
    /// Max relative zoom; the scale factor lies in `[1 - scale, 1 + scale]`.
    pub scale: f64,
    pub rotation_deg: f64,
    /// Max hue rotation, fraction of the color wheel.
    pub hue: f64,
    pub saturation: f64,
    pub exposure: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            shift: 0.08,
            scale: 0.1,
            rotation_deg: 8.0,
            hue: 0.015,
            saturation: 0.12,
            exposure: 0.12,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            shift: 0.0,
            scale: 0.0,
            rotation_deg: 0.0,
            hue: 0.0,
            saturation: 0.0,
            exposure: 0.0,
        }
    }
}

/// Similarity map about the frame center: `p' = c + s R(theta) (p - c) + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialTransform {
    pub shift_x: f64,
    pub shift_y: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl SpatialTransform {
    pub const IDENTITY: SpatialTransform = SpatialTransform {
        shift_x: 0.0,
        shift_y: 0.0,
        scale: 1.0,
        rotation: 0.0,
    };

    fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (x - 0.5, y - 0.5);
        (
            0.5 + self.scale * (c * dx - s * dy) + self.shift_x,
            0.5 + self.scale * (s * dx + c * dy) + self.shift_y,
        )
    }

    pub fn invert(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (
            (x - 0.5 - self.shift_x) / self.scale,
            (y - 0.5 - self.shift_y) / self.scale,
        );
        (0.5 + c * dx + s * dy, 0.5 - s * dx + c * dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorTransform {
    pub hue_shift: f64,
    pub saturation: f64,
    pub exposure: f64,
}

impl ColorTransform {
    pub const IDENTITY: ColorTransform = ColorTransform {
        hue_shift: 0.0,
        saturation: 1.0,
        exposure: 1.0,
    };
}

fn symmetric(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    if range > 0.0 {
        rng.random_range(-range..=range)
    } else {
        0.0
    }
}

/// Log-symmetric multiplicative factor in `[1/(1+r), 1+r]`.
fn factor(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    if range > 0.0 {
        let l = (1.0 + range).ln();
        rng.random_range(-l..=l).exp()
    } else {
        1.0
    }
}

/// Random crop/rotation/scale and hue/saturation/exposure jitter. Boxes move
/// with the image; a box whose center leaves the frame is dropped.
pub fn augment(sample: &Sample, config: &AugmentConfig, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spatial = SpatialTransform {
        shift_x: symmetric(&mut rng, config.shift),
        shift_y: symmetric(&mut rng, config.shift),
        scale: 1.0 + symmetric(&mut rng, config.scale),
        rotation: symmetric(&mut rng, config.rotation_deg).to_radians(),
    };
    let color = ColorTransform {
        hue_shift: symmetric(&mut rng, config.hue),
        saturation: factor(&mut rng, config.saturation),
        exposure: factor(&mut rng, config.exposure),
    };
    apply_transforms(sample, &spatial, &color)
}

pub fn apply_transforms(sample: &Sample, spatial: &SpatialTransform, color: &ColorTransform) -> Sample {
    let mut out = sample.clone();
    if !spatial.is_identity() {
        out.image.pixels = warp(&sample.image.pixels, spatial);
        out.boxes = sample
            .boxes
            .iter()
            .filter_map(|b| transform_box(b, spatial))
            .collect();
        out.regions = sample
            .regions
            .iter()
            .map(|r| PlantedRegion {
                condition: r.condition,
                rect: transform_rect(&r.rect, spatial),
            })
            .collect();
        if let Some(p) = out.priors.as_mut() {
            p.symptom_mask = warp_mask(&p.symptom_mask, spatial);
        }
    }
    if *color != ColorTransform::IDENTITY {
        jitter_color(&mut out.image.pixels, color);
    }
    out
}

fn warp(src: &Array3<f64>, t: &SpatialTransform) -> Array3<f64> {
    let (h, w, c) = src.dim();
    let view = src.view();
    let mut out = Array3::zeros((h, w, c));
    let mut buf = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = t.invert((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
            sample_bilinear(&view, fy * h as f64 - 0.5, fx * w as f64 - 0.5, &mut buf);
            for k in 0..c {
                out[[y, x, k]] = buf[k];
            }
        }
    }
    out
}

fn warp_mask(src: &Array3<u8>, t: &SpatialTransform) -> Array3<u8> {
    let (h, w, c) = src.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, k)| {
        let (fx, fy) = t.invert((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64);
        let (sx, sy) = ((fx * w as f64).floor(), (fy * h as f64).floor());
        if sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
            0
        } else {
            src[[sy as usize, sx as usize, k]]
        }
    })
}

fn transform_box(b: &BoundingBox, t: &SpatialTransform) -> Option<BoundingBox> {
    let (cx, cy) = t.apply(b.cx, b.cy);
    if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
        return None;
    }
    let (s, c) = t.rotation.sin_cos();
    let (s, c) = (s.abs(), c.abs());
    Some(BoundingBox {
        cx,
        cy,
        w: (t.scale * (b.w * c + b.h * s)).min(1.0),
        h: (t.scale * (b.w * s + b.h * c)).min(1.0),
        ..*b
    })
}

fn transform_rect(r: &FracRect, t: &SpatialTransform) -> FracRect {
    let corners = [(r.x0, r.y0), (r.x1, r.y0), (r.x0, r.y1), (r.x1, r.y1)].map(|(x, y)| t.apply(x, y));
    let xs = corners.iter().map(|p| p.0);
    let ys = corners.iter().map(|p| p.1);
    FracRect::new(
        xs.clone().fold(f64::INFINITY, f64::min).clamp(0.0, 1.0),
        ys.clone().fold(f64::INFINITY, f64::min).clamp(0.0, 1.0),
        xs.fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0),
        ys.fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0),
    )
}

pub(crate) fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

pub(crate) fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

fn jitter_color(px: &mut Array3<f64>, t: &ColorTransform) {
    let (h, w, _) = px.dim();
    for y in 0..h {
        for x in 0..w {
            let [hh, s, v] = rgb_to_hsv([px[[y, x, 0]], px[[y, x, 1]], px[[y, x, 2]]]);
            let rgb = hsv_to_rgb([
                hh + t.hue_shift,
                (s * t.saturation).clamp(0.0, 1.0),
                (v * t.exposure).clamp(0.0, 1.0),
            ]);
            for k in 0..3 {
                px[[y, x, k]] = rgb[k].clamp(0.0, 1.0);
            }
        }
    }
}
