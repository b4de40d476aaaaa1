//! Static rendering of the severity heatmap.
//!
//! Columns are clusters in heatmap order and rows are dates, earliest at the
//! top. Severity runs from pale yellow at 0 to dark red at 1; days without
//! an outlier are white and outliers without a fitted severity are grey.

use std::path::Path;

use bikedepth_core::severity::Heatmap;
use image::{Rgb, RgbImage};

use crate::error::{PipelineError, Result};

const EMPTY: Rgb<u8> = Rgb([255, 255, 255]);
const UNFITTED: Rgb<u8> = Rgb([170, 170, 170]);

#[derive(Debug, Clone, Copy)]
pub struct PlotOptions {
    pub cell_width: u32,
    pub cell_height: u32,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions { cell_width: 12, cell_height: 2 }
    }
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

pub fn severity_colour(theta: f64) -> Rgb<u8> {
    let t = theta.clamp(0.0, 1.0);
    Rgb([lerp(255, 128, t), lerp(237, 0, t), lerp(160, 38, t)])
}

/// Cell colour; `present` marks an outlier cluster-day.
fn cell_colour(cell: Option<f64>, present: bool) -> Rgb<u8> {
    match (cell, present) {
        (Some(theta), _) => severity_colour(theta),
        (None, true) => UNFITTED,
        (None, false) => EMPTY,
    }
}

/// Renders `map`; `outlier(row, col)` tells apart unfitted outliers from
/// empty cells.
pub fn render_heatmap(map: &Heatmap, opts: PlotOptions, outlier: impl Fn(usize, usize) -> bool) -> RgbImage {
    let w = (map.clusters.len() as u32 * opts.cell_width).max(1);
    let h = (map.dates.len() as u32 * opts.cell_height).max(1);
    let mut img = RgbImage::from_pixel(w, h, EMPTY);
    for (r, row) in map.cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let colour = cell_colour(*cell, outlier(r, c));
            for dy in 0..opts.cell_height {
                for dx in 0..opts.cell_width {
                    img.put_pixel(c as u32 * opts.cell_width + dx, r as u32 * opts.cell_height + dy, colour);
                }
            }
        }
    }
    img
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}
