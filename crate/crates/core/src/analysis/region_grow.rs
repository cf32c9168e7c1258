use std::collections::VecDeque;

use super::AnalysisError;
use crate::annotation::LabelMask;
use crate::geom::Rect;
use crate::pixel::{luminance, PixelBuffer};

/// Flood from `seed` over 8-neighbours whose luminance is within
/// `tolerance` of the running mean of the region grown so far. Stops
/// adding pixels once `max_area` is reached. The mask is in region
/// coordinates and bounded by the grown pixels.
pub fn region_grow(
    img: &PixelBuffer,
    seed: (i64, i64),
    tolerance: f64,
    max_area: u64,
) -> Result<LabelMask, AnalysisError> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (sx, sy) = seed;
    if sx < 0 || sy < 0 || sx >= w || sy >= h {
        return Err(AnalysisError::SeedOutOfBounds { x: sx, y: sy });
    }
    if !(tolerance >= 0.0) {
        return Err(AnalysisError::BadParams("tolerance must be non-negative".into()));
    }
    let ch = img.channels() as usize;
    let lum: Vec<f64> = img
        .data()
        .chunks_exact(ch)
        .map(|p| if ch >= 3 { luminance(p[0], p[1], p[2]) } else { p[0] } as f64)
        .collect();
    let idx = |x: i64, y: i64| (y * w + x) as usize;
    let mut inside = vec![false; lum.len()];
    let mut seen = vec![false; lum.len()];
    let mut queue = VecDeque::from([(sx, sy)]);
    seen[idx(sx, sy)] = true;
    let (mut sum, mut count) = (0f64, 0u64);
    let max_area = max_area.max(1);
    while let Some((x, y)) = queue.pop_front() {
        if count >= max_area {
            break;
        }
        let v = lum[idx(x, y)];
        if count > 0 && (v - sum / count as f64).abs() > tolerance {
            continue;
        }
        inside[idx(x, y)] = true;
        sum += v;
        count += 1;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx >= 0 && ny >= 0 && nx < w && ny < h && !seen[idx(nx, ny)] {
                    seen[idx(nx, ny)] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if inside[idx(x, y)] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    let bounds = Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
    let bits: Vec<bool> = (bounds.y..bounds.bottom())
        .flat_map(|y| (bounds.x..bounds.right()).map(move |x| (x, y)))
        .map(|(x, y)| inside[idx(x, y)])
        .collect();
    Ok(LabelMask::from_bits(bounds, &bits).expect("bits sized to bounds"))
}
