use super::registry::AnalysisOutput;
use super::AnalysisError;
use crate::pixel::PixelBuffer;
use crate::slide_io::PyramidDescriptor;
use crate::tiler::{dz_level_count, dz_level_dims, tile_rect, DeepZoomLayout};

pub const OVERLAY_ALPHA: u8 = 128;

/// Class 0 is transparent; other classes cycle through the entries.
pub fn default_palette() -> Vec<[u8; 4]> {
    let a = OVERLAY_ALPHA;
    vec![
        [0, 0, 0, 0],
        [230, 25, 75, a],
        [60, 180, 75, a],
        [0, 130, 200, a],
        [255, 225, 25, a],
        [145, 30, 180, a],
        [70, 240, 240, a],
        [240, 50, 230, a],
        [245, 130, 48, a],
    ]
}

fn colour(palette: &[[u8; 4]], class: u32) -> [u8; 4] {
    if class == 0 || palette.len() < 2 {
        return [0, 0, 0, 0];
    }
    let i = class as usize;
    palette[if i < palette.len() { i } else { 1 + (i - 1) % (palette.len() - 1) }]
}

const POINT_RADIUS: i64 = 3;

/// RGBA overlay for the Deep Zoom tile at `(dz_level, col, row)`,
/// aligned with the image tile at the same address. Each overlay pixel
/// samples the result at the centre of its base-level footprint.
pub fn render_overlay(
    result: &AnalysisOutput,
    palette: &[[u8; 4]],
    slide: &PyramidDescriptor,
    layout: &DeepZoomLayout,
    dz_level: u32,
    col: u32,
    row: u32,
) -> Result<PixelBuffer, AnalysisError> {
    let dims = dz_level_dims(slide.width, slide.height, dz_level)?;
    let rect = tile_rect(dz_level, col, row, layout, dims)?;
    let s = 1i64 << (dz_level_count(slide.width, slide.height) - 1 - dz_level);
    let (tw, th) = (rect.w as u32, rect.h as u32);
    let mut out = PixelBuffer::filled(tw, th, 4, 0);
    let base = |v: i64| v * s + s / 2;
    match result {
        AnalysisOutput::Grid(g) => {
            let cell = (g.grid_size as f64 * g.downsample).max(1.0);
            for j in 0..th {
                let gy = (base(rect.y + j as i64) as f64 / cell).floor() as i64;
                for i in 0..tw {
                    let gx = (base(rect.x + i as i64) as f64 / cell).floor() as i64;
                    if gx < g.cols as i64 && gy < g.rows as i64 {
                        let c = colour(palette, g.label(gx as u32, gy as u32));
                        out.pixel_mut(i, j).copy_from_slice(&c);
                    }
                }
            }
        }
        AnalysisOutput::Mask(m) => {
            let spans = m.spans();
            let c = colour(palette, 1);
            for j in 0..th {
                let by = base(rect.y + j as i64);
                let lo = spans.partition_point(|sp| sp.0 < by);
                let hi = spans.partition_point(|sp| sp.0 <= by);
                for &(_, x0, x1) in &spans[lo..hi] {
                    // Tile pixels whose sample point lies in [x0, x1).
                    let first = ((x0 - s / 2) as f64 / s as f64).ceil() as i64 - rect.x;
                    let last = ((x1 - s / 2) as f64 / s as f64).ceil() as i64 - rect.x;
                    for i in first.max(0)..last.min(tw as i64) {
                        out.pixel_mut(i as u32, j).copy_from_slice(&c);
                    }
                }
            }
        }
        AnalysisOutput::Points(points) => {
            let c = colour(palette, 1);
            for p in points {
                let cx = (p.x / s as f64).floor() as i64 - rect.x;
                let cy = (p.y / s as f64).floor() as i64 - rect.y;
                for dy in -POINT_RADIUS..=POINT_RADIUS {
                    for dx in -POINT_RADIUS..=POINT_RADIUS {
                        let (x, y) = (cx + dx, cy + dy);
                        if dx * dx + dy * dy <= POINT_RADIUS * POINT_RADIUS
                            && x >= 0
                            && y >= 0
                            && x < tw as i64
                            && y < th as i64
                        {
                            out.pixel_mut(x as u32, y as u32).copy_from_slice(&c);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
