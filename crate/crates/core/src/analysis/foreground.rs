use super::otsu::{histogram, otsu_threshold};
use super::AnalysisError;
use crate::annotation::LabelMask;
use crate::geom::Rect;
use crate::pixel::PixelBuffer;
use crate::slide_io::Slide;
use crate::tiler::make_thumbnail;

/// `max(R,G,B) - min(R,G,B)` per pixel; zero for grayscale input.
pub fn saturation(img: &PixelBuffer) -> Vec<u8> {
    let ch = img.channels() as usize;
    img.data()
        .chunks_exact(ch)
        .map(|p| {
            if ch < 3 {
                0
            } else {
                let (r, g, b) = (p[0], p[1], p[2]);
                r.max(g).max(b) - r.min(g).min(b)
            }
        })
        .collect()
}

/// 3×3 erosion (`dilate == false`) or dilation with replicated borders.
fn morph(bits: &[bool], w: usize, h: usize, dilate: bool) -> Vec<bool> {
    let mut out = vec![false; bits.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = !dilate;
            'n: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                    let ny = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                    let v = bits[ny * w + nx];
                    if dilate && v {
                        acc = true;
                        break 'n;
                    }
                    if !dilate && !v {
                        acc = false;
                        break 'n;
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Saturation cut separating glass from tissue. Tissue is often several
/// saturation modes, so Otsu is re-applied to the lower class while its
/// two halves differ in mean by at least `min_saturation`; the cut lands
/// just above the lowest such split and never below `min_saturation`.
pub(crate) fn tissue_cut(hist: &[u64; 256], min_saturation: u8) -> u8 {
    let mut sub = *hist;
    let mut cut = min_saturation;
    loop {
        if sub.iter().filter(|&&c| c > 0).count() < 2 {
            return cut;
        }
        let t = otsu_threshold(&sub) as usize;
        let mean = |bins: &[u64], from: usize| {
            let n: u64 = bins.iter().sum();
            let s: u64 = bins.iter().enumerate().map(|(i, &c)| (from + i) as u64 * c).sum();
            s as f64 / n.max(1) as f64
        };
        if mean(&sub[t + 1..], t + 1) - mean(&sub[..=t], 0) < min_saturation as f64 {
            return cut;
        }
        cut = (t as u8).saturating_add(1).max(min_saturation);
        sub[t + 1..].fill(0);
    }
}

/// Binary tissue mask of a small working image: saturation at or above
/// [`tissue_cut`], then a 3×3 open and close.
pub(crate) fn foreground_bits(img: &PixelBuffer, min_saturation: u8) -> Vec<bool> {
    let sat = saturation(img);
    let cut = tissue_cut(&histogram(sat.iter().copied()), min_saturation);
    let bits: Vec<bool> = sat.iter().map(|&s| s >= cut).collect();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let opened = morph(&morph(&bits, w, h, false), w, h, true);
    morph(&morph(&opened, w, h, true), w, h, false)
}

/// Foreground mask in base-level coordinates, computed on a thumbnail no
/// larger than `work_max_dim` and scaled up by nearest-neighbour runs.
pub fn foreground_mask(slide: &Slide, work_max_dim: u32, min_saturation: u8) -> Result<LabelMask, AnalysisError> {
    let thumb = make_thumbnail(slide, work_max_dim.max(1))?;
    let bits = foreground_bits(&thumb, min_saturation);
    let d = slide.descriptor();
    Ok(upscale(&bits, thumb.width(), thumb.height(), d.width, d.height))
}

/// Nearest-neighbour upscale of a `tw×th` raster to `w×h`, emitted as
/// runs. Base pixel `x` samples thumbnail column `floor(x * tw / w)`, so
/// thumbnail run `[a, b)` covers base `[ceil(a w / tw), ceil(b w / tw))`.
pub(crate) fn upscale(bits: &[bool], tw: u32, th: u32, w: u32, h: u32) -> LabelMask {
    let map = |a: u64, from: u64, to: u64| (a * to).div_ceil(from);
    let (tw64, w64) = (tw as u64, w as u64);
    let mut row_runs: Vec<Vec<(u64, u64)>> = Vec::with_capacity(th as usize);
    for ty in 0..th as usize {
        let row = &bits[ty * tw as usize..(ty + 1) * tw as usize];
        let mut runs = Vec::new();
        let mut x = 0usize;
        while x < row.len() {
            if row[x] {
                let s = x;
                while x < row.len() && row[x] {
                    x += 1;
                }
                runs.push((map(s as u64, tw64, w64), map(x as u64, tw64, w64)));
            } else {
                x += 1;
            }
        }
        row_runs.push(runs);
    }
    let mut runs: Vec<u64> = vec![0];
    let mut on = false;
    let mut push = |value: bool, n: u64| {
        if n == 0 {
            return;
        }
        if value != on {
            runs.push(0);
            on = value;
        }
        *runs.last_mut().expect("non-empty") += n;
    };
    for y in 0..h as u64 {
        let ty = (y * th as u64 / h as u64) as usize;
        let mut x = 0u64;
        for &(a, b) in &row_runs[ty] {
            push(false, a - x);
            push(true, b - a);
            x = b;
        }
        push(false, w64 - x);
    }
    LabelMask::from_runs(Rect::new(0, 0, w as i64, h as i64), runs).expect("runs cover the slide")
}
