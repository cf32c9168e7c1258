use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};

use super::deepzoom::{dz_level_count, dz_level_dims, tile_rect, DeepZoomLayout};
use super::downsample::downsample_2x;
use super::TilerError;
use crate::pixel::PixelBuffer;
use crate::slide_io::{halved_dims, Slide, TileFormat};

/// Above this many source pixels an inexact level is resampled instead of
/// being rebuilt exactly from a finer one.
const EXACT_READ_LIMIT: u64 = 1 << 26;

fn parse_format(format: &str) -> Result<TileFormat, TilerError> {
    format
        .parse::<TileFormat>()
        .map_err(|_| TilerError::UnsupportedFormat(format.to_owned()))
}

/// Pixels of a Deep Zoom tile, overlaps included.
pub fn render_tile_pixels(
    slide: &Slide,
    layout: &DeepZoomLayout,
    dz_level: u32,
    col: u32,
    row: u32,
) -> Result<PixelBuffer, TilerError> {
    let d = slide.descriptor();
    let dims = dz_level_dims(d.width, d.height, dz_level)?;
    let rect = tile_rect(dz_level, col, row, layout, dims)?;
    let steps = dz_level_count(d.width, d.height) - 1 - dz_level;

    // Pick the finest level that is an exact power-of-two reduction of
    // the base at or below this scale; halving it `residual` more times
    // reproduces the Deep Zoom level exactly.
    let exact = (0..slide.level_count()).rev().find_map(|i| {
        let l = d.levels[i];
        let k = l.downsample.log2().round();
        if k < 0.0 || k > steps as f64 {
            return None;
        }
        let k = k as u32;
        ((l.width, l.height) == halved_dims(d.width, d.height, k)).then_some((i, steps - k))
    });
    let (level, residual) = exact.unwrap_or((0, steps));
    let s = 1i64 << residual;
    let lw = d.levels[level].width as i64;
    let lh = d.levels[level].height as i64;
    let (x, y) = (rect.x * s, rect.y * s);
    let w = (rect.w * s).min(lw - x);
    let h = (rect.h * s).min(lh - y);
    if residual == 0 {
        return Ok(slide.read_region(level, x, y, w as u32, h as u32)?);
    }
    if (w as u64) * (h as u64) <= EXACT_READ_LIMIT {
        let mut buf = slide.read_region(level, x, y, w as u32, h as u32)?;
        for _ in 0..residual {
            buf = downsample_2x(&buf);
        }
        return Ok(buf);
    }
    // Approximate path for pyramids with large gaps between levels.
    let ds = (1u64 << steps) as f64;
    let best = slide.descriptor().best_level_for_downsample(ds);
    let l = d.levels[best];
    let fx = d.width as f64 / l.width as f64;
    let fy = d.height as f64 / l.height as f64;
    let sx = ((rect.x as f64) * ds / fx).floor() as i64;
    let sy = ((rect.y as f64) * ds / fy).floor() as i64;
    let sw = (((rect.w as f64) * ds / fx).ceil() as u32).max(1);
    let sh = (((rect.h as f64) * ds / fy).ceil() as u32).max(1);
    let src = slide.read_region(best, sx, sy, sw, sh)?;
    Ok(resize(&src, rect.w as u32, rect.h as u32))
}

/// Encoded Deep Zoom tile. PNG output is byte-stable.
pub fn render_tile(
    slide: &Slide,
    layout: &DeepZoomLayout,
    dz_level: u32,
    col: u32,
    row: u32,
    format: &str,
) -> Result<Vec<u8>, TilerError> {
    let fmt = parse_format(format)?;
    let px = render_tile_pixels(slide, layout, dz_level, col, row)?;
    Ok(crate::slide_io::encode_tile(&px, fmt)?)
}

fn resize(src: &PixelBuffer, w: u32, h: u32) -> PixelBuffer {
    if (src.width(), src.height()) == (w, h) {
        return src.clone();
    }
    let src = if src.channels() == 4 { src.to_channels(3) } else { src.clone() };
    let (sw, sh, ch) = (src.width(), src.height(), src.channels());
    let data = if ch == 1 {
        let img = GrayImage::from_raw(sw, sh, src.into_raw()).expect("buffer matches dims");
        imageops::resize(&img, w, h, FilterType::Triangle).into_raw()
    } else {
        let img = RgbImage::from_raw(sw, sh, src.into_raw()).expect("buffer matches dims");
        imageops::resize(&img, w, h, FilterType::Triangle).into_raw()
    };
    PixelBuffer::from_raw(w, h, ch, data).expect("resize output matches dims")
}

/// Aspect-preserving thumbnail no larger than `max_dim` on either side.
pub fn make_thumbnail(slide: &Slide, max_dim: u32) -> Result<PixelBuffer, TilerError> {
    let max_dim = max_dim.max(1);
    let d = slide.descriptor();
    if d.width.max(d.height) <= max_dim {
        return Ok(slide.read_level(0)?);
    }
    let level = d
        .levels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.width.max(l.height) >= max_dim)
        .min_by_key(|(_, l)| l.width.max(l.height))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let (w, h) = thumbnail_dims(d.width, d.height, max_dim);
    let src = slide.read_level(level)?;
    Ok(resize(&src, w, h))
}

pub(crate) fn thumbnail_dims(width: u32, height: u32, max_dim: u32) -> (u32, u32) {
    let m = width.max(height) as u64;
    let scale = |v: u32| (((v as u64) * (max_dim as u64) * 2 + m) / (2 * m)).max(1) as u32;
    (scale(width), scale(height))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thumbnail_dims_follow_aspect() {
        assert_eq!(thumbnail_dims(1000, 600, 100), (100, 60));
        assert_eq!(thumbnail_dims(600, 1000, 100), (60, 100));
        assert_eq!(thumbnail_dims(1000, 3, 100), (100, 1));
        assert_eq!(thumbnail_dims(1000, 600, 1), (1, 1));
    }

    #[test]
    fn bad_format_rejected() {
        assert!(matches!(parse_format("bmp"), Err(TilerError::UnsupportedFormat(_))));
        assert_eq!(parse_format("png").unwrap(), TileFormat::Png);
    }
}
