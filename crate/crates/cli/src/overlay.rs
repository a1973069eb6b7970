use image::{Rgb, RgbImage};
use oralscan_core::explain::Heatmap;
use oralscan_core::{BoundingBox, ConditionKind, OralImage};

/// Box outline colors, one per localized condition.
pub fn box_color(condition: ConditionKind) -> Rgb<u8> {
    match condition {
        ConditionKind::PeriodontalDisease => Rgb([230, 40, 40]),
        ConditionKind::Caries => Rgb([250, 200, 20]),
        ConditionKind::DentalCalculus => Rgb([40, 200, 240]),
        _ => Rgb([255, 255, 255]),
    }
}

/// Nearest-neighbour enlargement so thin outlines stay visible.
pub fn upscale(image: &OralImage, factor: u32) -> RgbImage {
    let small = image.to_rgb8();
    RgbImage::from_fn(small.width() * factor, small.height() * factor, |x, y| {
        *small.get_pixel(x / factor, y / factor)
    })
}

pub fn draw_box(canvas: &mut RgbImage, b: &BoundingBox, color: Rgb<u8>, thickness: u32) {
    let (w, h) = (canvas.width() as f64, canvas.height() as f64);
    let clamp_x = |v: f64| (v * w).round().clamp(0.0, w - 1.0) as u32;
    let clamp_y = |v: f64| (v * h).round().clamp(0.0, h - 1.0) as u32;
    let (x0, x1) = (clamp_x(b.x0()), clamp_x(b.x1()));
    let (y0, y1) = (clamp_y(b.y0()), clamp_y(b.y1()));
    for t in 0..thickness {
        for x in x0..=x1 {
            for y in [y0.saturating_add(t).min(y1), y1.saturating_sub(t).max(y0)] {
                canvas.put_pixel(x, y, color);
            }
        }
        for y in y0..=y1 {
            for x in [x0.saturating_add(t).min(x1), x1.saturating_sub(t).max(x0)] {
                canvas.put_pixel(x, y, color);
            }
        }
    }
}

/// Blend a red relevance layer over the image; `opacity` scales the
/// strongest cell.
pub fn blend_heatmap(base: &RgbImage, heatmap: &Heatmap, opacity: f64) -> RgbImage {
    let (hh, hw) = heatmap.values.dim();
    let (w, h) = base.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        let r = (y as usize * hh / h as usize).min(hh - 1);
        let c = (x as usize * hw / w as usize).min(hw - 1);
        let a = (heatmap.values[[r, c]] * opacity).clamp(0.0, 1.0);
        let p = base.get_pixel(x, y).0;
        let mix = |v: u8, target: f64| ((1.0 - a) * v as f64 + a * target).round() as u8;
        Rgb([mix(p[0], 255.0), mix(p[1], 0.0), mix(p[2], 0.0)])
    })
}
