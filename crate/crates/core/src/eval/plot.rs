use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [[u8; 3]; 5] = [
    [214, 39, 40],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
];

const SIZE: u32 = 320;
const MARGIN: u32 = 24;

/// Line plot on a white canvas with plain axes, x in `[0, x_max]` and y in
/// `[0, 1]`. Series are colored in order; labels only go to the caller.
pub fn render_curves(series: &[PlotSeries], x_max: f64, path: &Path) -> Result<()> {
    if !(x_max > 0.0) {
        return Err(Error::Config("plot needs a positive x range".into()));
    }
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let span = (SIZE - 2 * MARGIN) as f64;
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        (
            MARGIN as f64 + (x / x_max).clamp(0.0, 1.0) * span,
            (SIZE - MARGIN) as f64 - y.clamp(0.0, 1.0) * span,
        )
    };
    let axis = Rgb([60, 60, 60]);
    draw_line(&mut img, to_px(0.0, 0.0), to_px(x_max, 0.0), axis);
    draw_line(&mut img, to_px(0.0, 0.0), to_px(0.0, 1.0), axis);
    for tick in 1..=4 {
        let f = tick as f64 / 4.0;
        let (x, y) = to_px(f * x_max, 0.0);
        draw_line(&mut img, (x, y), (x, y + 4.0), axis);
        let (x, y) = to_px(0.0, f);
        draw_line(&mut img, (x - 4.0, y), (x, y), axis);
    }
    for (k, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        let mut pts = s.points.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        for w in pts.windows(2) {
            draw_line(&mut img, to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), color);
        }
    }
    img.save(path).map_err(Error::from)
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (a.0 + (b.0 - a.0) * t).round();
        let y = (a.1 + (b.1 - a.1) * t).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}
