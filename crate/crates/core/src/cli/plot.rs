//! SVG scatter plots and binary PGM image grids.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 24.0;

/// Points drawn in one color.
pub struct Layer<'a> {
    pub points: &'a Tensor,
    pub color: &'a str,
    pub radius: f64,
    /// Connect consecutive points instead of drawing dots.
    pub path: bool,
}

/// Renders the first two coordinates of every layer on shared axes.
pub fn scatter_svg(title: &str, layers: &[Layer]) -> Result<String> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for l in layers {
        if l.points.cols() < 2 {
            return shape_err("scatter plots need two coordinates");
        }
        for r in l.points.iter_rows() {
            for k in 0..2 {
                if r[k].is_finite() {
                    lo[k] = lo[k].min(r[k]);
                    hi[k] = hi[k].max(r[k]);
                }
            }
        }
    }
    if lo[0] > hi[0] {
        lo = [-1.0; 2];
        hi = [1.0; 2];
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let mid = [(hi[0] + lo[0]) / 2.0, (hi[1] + lo[1]) / 2.0];
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |x: f64| SIZE / 2.0 + (x - mid[0]) * scale;
    let py = |y: f64| SIZE / 2.0 - (y - mid[1]) * scale;

    let mut s = String::new();
    writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">
<rect width="100%" height="100%" fill="white"/>
<text x="{MARGIN}" y="16" font-family="sans-serif" font-size="12">{}</text>"#,
        escape(title)
    )
    .expect("string write");
    for l in layers {
        let finite = l.points.iter_rows().filter(|r| r[0].is_finite() && r[1].is_finite());
        if l.path {
            let pts: Vec<String> = finite.map(|r| format!("{:.2},{:.2}", px(r[0]), py(r[1]))).collect();
            writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                l.color,
                pts.join(" ")
            )
            .expect("string write");
            for p in &pts {
                let (x, y) = p.split_once(',').expect("x,y");
                writeln!(s, r#"<circle cx="{x}" cy="{y}" r="{}" fill="{}"/>"#, l.radius, l.color)
                    .expect("string write");
            }
        } else {
            writeln!(s, r#"<g fill="{}" fill-opacity="0.6">"#, l.color).expect("string write");
            for r in finite {
                writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="{}"/>"#, px(r[0]), py(r[1]), l.radius)
                    .expect("string write");
            }
            s.push_str("</g>\n");
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_scatter(path: &Path, title: &str, layers: &[Layer]) -> Result<()> {
    std::fs::write(path, scatter_svg(title, layers)?)?;
    Ok(())
}

/// Binary PGM (P5) of images laid out `per_row` to a row. Pixels are clamped
/// to `[0, 1]` and scaled to 0–255; unused cells stay black.
pub fn image_grid_pgm(images: &Tensor, height: usize, width: usize, per_row: usize) -> Result<Vec<u8>> {
    if images.cols() != height * width || per_row == 0 {
        return shape_err(format!(
            "images have {} pixels, expected {height}×{width}",
            images.cols()
        ));
    }
    let n = images.rows();
    let cols = per_row.min(n.max(1));
    let rows = n.div_ceil(per_row).max(1);
    let (w, h) = (cols * width, rows * height);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let mut pixels = vec![0u8; w * h];
    for (i, img) in images.iter_rows().enumerate() {
        let (gr, gc) = (i / per_row, i % per_row);
        for y in 0..height {
            for x in 0..width {
                let v = img[y * width + x];
                let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
                pixels[(gr * height + y) * w + gc * width + x] = (v * 255.0).round() as u8;
            }
        }
    }
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn write_image_grid(path: &Path, images: &Tensor, height: usize, width: usize) -> Result<()> {
    std::fs::write(path, image_grid_pgm(images, height, width, 10)?)?;
    Ok(())
}
