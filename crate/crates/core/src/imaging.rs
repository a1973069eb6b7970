//! RGB image container, guide-box cropping and bilinear resampling.

use std::path::Path;

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default square model input edge, in pixels.
pub const DEFAULT_INPUT_SIZE: usize = 64;

/// An RGB image with values in `[0, 1]`, stored as `(height, width, 3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OralImage {
    pub pixels: Array3<f64>,
    pub source_id: String,
    pub person_id: String,
}

impl OralImage {
    pub fn new(pixels: Array3<f64>, source_id: impl Into<String>, person_id: impl Into<String>) -> Result<Self> {
        if pixels.shape()[2] != 3 || pixels.shape()[0] == 0 || pixels.shape()[1] == 0 {
            return Err(Error::Shape(format!(
                "expected non-empty H x W x 3 pixels, got {:?}",
                pixels.shape()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Validation {
                field: "pixels".into(),
                message: format!("value {v} outside [0, 1]"),
            });
        }
        Ok(OralImage {
            pixels,
            source_id: source_id.into(),
            person_id: person_id.into(),
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let pixels = Array3::from_shape_fn((height, width, 3), |(_, _, c)| rgb[c]);
        OralImage {
            pixels,
            source_id: String::new(),
            person_id: String::new(),
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn mean_brightness(&self) -> f64 {
        self.pixels.mean().unwrap_or(0.0)
    }

    /// Round every value to the nearest 8-bit level so a PNG round trip is exact.
    pub fn quantize(&mut self) {
        self.pixels
            .mapv_inplace(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let (h, w) = (self.height(), self.width());
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = |c| (self.pixels[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([p(0), p(1), p(2)])
        })
    }

    pub fn from_rgb8(img: &image::RgbImage, source_id: impl Into<String>, person_id: impl Into<String>) -> Self {
        let (w, h) = img.dimensions();
        let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
        });
        OralImage {
            pixels,
            source_id: source_id.into(),
            person_id: person_id.into(),
        }
    }

    /// Decode any supported encoded image (PNG) into an `OralImage`.
    pub fn decode(bytes: &[u8], source_id: impl Into<String>, person_id: impl Into<String>) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        Ok(Self::from_rgb8(&img, source_id, person_id))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path, source_id: impl Into<String>, person_id: impl Into<String>) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img, source_id, person_id))
    }
}

/// Axis-aligned rectangle in fractional coordinates, corners `(x0, y0)`–`(x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FracRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl FracRect {
    pub const FULL: FracRect = FracRect {
        x0: 0.0,
        y0: 0.0,
        x1: 1.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        FracRect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn contains_rect(&self, other: &FracRect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    fn in_unit_square(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1]
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    fn check(&self, name: &str) -> Result<()> {
        if !self.in_unit_square() {
            return Err(Error::InvalidGeometry(format!(
                "{name} {self:?} has coordinates outside [0, 1]"
            )));
        }
        if self.width() <= 0.0 || self.height() <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "{name} {self:?} has zero width or height"
            )));
        }
        Ok(())
    }

    /// Pixel mask of the rectangle on an `height x width` grid (pixel centers).
    pub fn mask(&self, height: usize, width: usize) -> ndarray::Array2<bool> {
        ndarray::Array2::from_shape_fn((height, width), |(r, c)| {
            let x = (c as f64 + 0.5) / width as f64;
            let y = (r as f64 + 0.5) / height as f64;
            self.contains_point(x, y)
        })
    }
}

/// The dashed alignment box and the solid crop box shown while capturing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuideGeometry {
    pub dashed_box: FracRect,
    pub solid_box: FracRect,
}

impl GuideGeometry {
    pub fn new(dashed_box: FracRect, solid_box: FracRect) -> Result<Self> {
        let g = GuideGeometry {
            dashed_box,
            solid_box,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn full_frame() -> Self {
        GuideGeometry {
            dashed_box: FracRect::FULL,
            solid_box: FracRect::FULL,
        }
    }

    /// A centered guide whose solid box has the given width/height aspect
    /// ratio in image-fraction units and spans `coverage` of the limiting axis.
    pub fn centered(aspect: f64, coverage: f64, margin: f64) -> Result<Self> {
        if !(aspect > 0.0) || !(coverage > 0.0 && coverage <= 1.0) || !(0.0..0.5).contains(&margin) {
            return Err(Error::InvalidGeometry(format!(
                "aspect {aspect}, coverage {coverage}, margin {margin} do not describe a guide"
            )));
        }
        let (mut w, mut h) = if aspect >= 1.0 {
            (coverage, coverage / aspect)
        } else {
            (coverage * aspect, coverage)
        };
        w = w.min(1.0);
        h = h.min(1.0);
        let solid = FracRect::new(0.5 - w / 2.0, 0.5 - h / 2.0, 0.5 + w / 2.0, 0.5 + h / 2.0);
        let dashed = FracRect::new(
            (solid.x0 - margin).max(0.0),
            (solid.y0 - margin).max(0.0),
            (solid.x1 + margin).min(1.0),
            (solid.y1 + margin).min(1.0),
        );
        Self::new(dashed, solid)
    }

    pub fn validate(&self) -> Result<()> {
        self.dashed_box.check("dashed_box")?;
        self.solid_box.check("solid_box")?;
        if !self.dashed_box.contains_rect(&self.solid_box) {
            return Err(Error::InvalidGeometry(
                "solid_box must lie inside dashed_box".into(),
            ));
        }
        Ok(())
    }
}

/// Bilinear sample of an `(h, w, c)` image at continuous pixel coordinates,
/// clamping to the edge. `(0, 0)` is the center of the top-left pixel.
pub(crate) fn sample_bilinear(src: &ArrayView3<f64>, y: f64, x: f64, out: &mut [f64]) {
    let (h, w, c) = src.dim();
    let yc = y.clamp(0.0, (h - 1) as f64);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let y0 = yc.floor() as usize;
    let x0 = xc.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = yc - y0 as f64;
    let fx = xc - x0 as f64;
    for (k, o) in out.iter_mut().enumerate().take(c) {
        let top = src[[y0, x0, k]] * (1.0 - fx) + src[[y0, x1, k]] * fx;
        let bottom = src[[y1, x0, k]] * (1.0 - fx) + src[[y1, x1, k]] * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
}

/// Resample the fractional region `rect` of `src` onto an `out_h x out_w` grid.
pub fn resample_region(src: &ArrayView3<f64>, rect: &FracRect, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = src.dim();
    let mut out = Array3::zeros((out_h, out_w, c));
    let mut buf = vec![0.0; c];
    // pixel-center convention: output center (i + 0.5) maps into the region,
    // then back to source pixel-center coordinates
    for i in 0..out_h {
        let fy = rect.y0 + (i as f64 + 0.5) / out_h as f64 * rect.height();
        let sy = fy * h as f64 - 0.5;
        for j in 0..out_w {
            let fx = rect.x0 + (j as f64 + 0.5) / out_w as f64 * rect.width();
            let sx = fx * w as f64 - 0.5;
            sample_bilinear(src, sy, sx, &mut buf);
            for k in 0..c {
                out[[i, j, k]] = buf[k];
            }
        }
    }
    out
}

pub fn resize_bilinear(src: &ArrayView3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    resample_region(src, &FracRect::FULL, out_h, out_w)
}

/// Crop the solid guide box out of `image` and rescale it to a square
/// `input_size` model input.
pub fn crop_to_guide(image: &OralImage, guide: &GuideGeometry, input_size: usize) -> Result<OralImage> {
    guide.solid_box.check("solid_box")?;
    if input_size == 0 {
        return Err(Error::InvalidGeometry("input size must be positive".into()));
    }
    let pixels = resample_region(&image.pixels.view(), &guide.solid_box, input_size, input_size)
        .mapv(|v| v.clamp(0.0, 1.0));
    Ok(OralImage {
        pixels,
        source_id: image.source_id.clone(),
        person_id: image.person_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient_image(n: usize) -> OralImage {
        let pixels = Array3::from_shape_fn((n, n, 3), |(y, x, c)| {
            ((x * 3 + y * 5 + c * 7) % 256) as f64 / 255.0
        });
        OralImage::new(pixels, "g", "p").unwrap()
    }

    #[test]
    fn identity_crop_is_exact() {
        let img = gradient_image(64);
        let out = crop_to_guide(&img, &GuideGeometry::full_frame(), 64).unwrap();
        assert_eq!(out.pixels, img.pixels);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = OralImage::filled(80, 80, [0.2, 0.4, 0.6]);
        let guide = GuideGeometry::new(FracRect::FULL, FracRect::new(0.25, 0.25, 0.75, 0.75)).unwrap();
        let out = crop_to_guide(&img, &guide, 64).unwrap();
        assert_eq!(out.pixels.dim(), (64, 64, 3));
        for ((_, _, c), v) in out.pixels.indexed_iter() {
            assert!((v - [0.2, 0.4, 0.6][c]).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_on_bright_square_raises_mean() {
        let mut img = OralImage::filled(64, 64, [0.1, 0.1, 0.1]);
        for y in 24..40 {
            for x in 24..40 {
                for c in 0..3 {
                    img.pixels[[y, x, c]] = 1.0;
                }
            }
        }
        let guide = GuideGeometry::new(
            FracRect::FULL,
            FracRect::new(24.0 / 64.0, 24.0 / 64.0, 40.0 / 64.0, 40.0 / 64.0),
        )
        .unwrap();
        let out = crop_to_guide(&img, &guide, 64).unwrap();
        let input_mean = img.pixels.iter().sum::<f64>() / img.pixels.len() as f64;
        let output_mean = out.pixels.iter().sum::<f64>() / out.pixels.len() as f64;
        assert!(output_mean > input_mean, "{output_mean} <= {input_mean}");
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let img = gradient_image(16);
        let guide = GuideGeometry {
            dashed_box: FracRect::FULL,
            solid_box: FracRect::new(0.3, 0.3, 0.3, 0.8),
        };
        assert!(matches!(
            crop_to_guide(&img, &guide, 64),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn guide_requires_nesting() {
        let err = GuideGeometry::new(
            FracRect::new(0.2, 0.2, 0.6, 0.6),
            FracRect::new(0.1, 0.1, 0.5, 0.5),
        );
        assert!(err.is_err());
        let g = GuideGeometry::centered(4.0 / 3.0, 0.9, 0.05).unwrap();
        assert!((g.solid_box.width() / g.solid_box.height() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip_is_lossless_after_quantize() {
        let mut img = gradient_image(20);
        img.pixels.mapv_inplace(|v| (v * 0.77).sqrt());
        img.quantize();
        let bytes = img.encode_png().unwrap();
        let back = OralImage::decode(&bytes, "g", "p").unwrap();
        assert_eq!(back.pixels, img.pixels);
    }

    proptest! {
        #[test]
        fn full_frame_recrop_is_idempotent(x0 in 0.0f64..0.4, y0 in 0.0f64..0.4, w in 0.3f64..0.6, h in 0.3f64..0.6) {
            let img = gradient_image(64);
            let guide = GuideGeometry::new(FracRect::FULL, FracRect::new(x0, y0, x0 + w, y0 + h)).unwrap();
            let once = crop_to_guide(&img, &guide, 64).unwrap();
            let twice = crop_to_guide(&once, &GuideGeometry::full_frame(), 64).unwrap();
            let max_diff = once.pixels.iter().zip(twice.pixels.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(max_diff <= 0.02);
        }
    }
}
