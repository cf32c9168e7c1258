use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::AnnotationError;
use crate::geom::{Point, Rect};

/// Binary raster over `bounds`, run-length encoded row-major. Runs
/// alternate 0/1 and start with a (possibly empty) run of zeros.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMask")]
pub struct LabelMask {
    pub bounds: Rect,
    rle: Vec<u64>,
}

#[derive(Deserialize)]
struct RawMask {
    bounds: Rect,
    rle: Vec<u64>,
}

impl TryFrom<RawMask> for LabelMask {
    type Error = AnnotationError;

    fn try_from(raw: RawMask) -> Result<Self, Self::Error> {
        LabelMask::from_runs(raw.bounds, raw.rle)
    }
}

/// Incremental RLE writer; values must be pushed in raster order.
#[derive(Debug, Default)]
pub(crate) struct RleBuilder {
    runs: Vec<u64>,
    current: bool,
}

impl RleBuilder {
    pub fn new() -> Self {
        RleBuilder {
            runs: vec![0],
            current: false,
        }
    }

    pub fn push(&mut self, value: bool, count: u64) {
        if count == 0 {
            return;
        }
        if value != self.current {
            self.runs.push(0);
            self.current = value;
        }
        *self.runs.last_mut().expect("runs start non-empty") += count;
    }

    pub fn finish(self, bounds: Rect) -> LabelMask {
        LabelMask { bounds, rle: self.runs }
    }
}

fn normalise(bounds: Rect) -> Rect {
    if bounds.is_empty() {
        Rect::new(bounds.x, bounds.y, 0, 0)
    } else {
        bounds
    }
}

impl LabelMask {
    pub fn empty(bounds: Rect) -> LabelMask {
        let bounds = normalise(bounds);
        LabelMask {
            bounds,
            rle: vec![bounds.area() as u64],
        }
    }

    pub fn full(bounds: Rect) -> LabelMask {
        let bounds = normalise(bounds);
        let mut b = RleBuilder::new();
        b.push(true, bounds.area() as u64);
        b.finish(bounds)
    }

    /// Validate and canonicalise runs (zero-length interior runs merge).
    pub fn from_runs(bounds: Rect, runs: Vec<u64>) -> Result<LabelMask, AnnotationError> {
        if bounds.w < 0 || bounds.h < 0 {
            return Err(AnnotationError::MalformedMask("negative bounds".into()));
        }
        let bounds = normalise(bounds);
        let mut total: u64 = 0;
        let mut b = RleBuilder::new();
        for (i, &r) in runs.iter().enumerate() {
            total = total
                .checked_add(r)
                .ok_or_else(|| AnnotationError::MalformedMask("run total overflows".into()))?;
            b.push(i % 2 == 1, r);
        }
        if total != bounds.area() as u64 {
            return Err(AnnotationError::MalformedMask(format!(
                "runs cover {total} pixels, bounds hold {}",
                bounds.area()
            )));
        }
        Ok(b.finish(bounds))
    }

    pub fn from_bits(bounds: Rect, bits: &[bool]) -> Result<LabelMask, AnnotationError> {
        let bounds = normalise(bounds);
        if bits.len() as i64 != bounds.area() {
            return Err(AnnotationError::MalformedMask("bit count does not match bounds".into()));
        }
        let mut b = RleBuilder::new();
        for &v in bits {
            b.push(v, 1);
        }
        Ok(b.finish(bounds))
    }

    pub fn runs(&self) -> &[u64] {
        &self.rle
    }

    pub fn to_bits(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.bounds.area() as usize);
        for (i, &r) in self.rle.iter().enumerate() {
            out.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
        }
        out
    }

    /// Number of set pixels.
    pub fn area(&self) -> u64 {
        self.rle.iter().skip(1).step_by(2).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    /// Maximal horizontal runs of set pixels as `(y, x_start, x_end)` in
    /// slide coordinates, `x_end` exclusive.
    pub fn spans(&self) -> Vec<(i64, i64, i64)> {
        let w = self.bounds.w;
        let mut out = Vec::new();
        if w <= 0 {
            return out;
        }
        let mut pos: i64 = 0;
        for (i, &r) in self.rle.iter().enumerate() {
            let r = r as i64;
            if i % 2 == 1 {
                let (mut s, e) = (pos, pos + r);
                while s < e {
                    let row = s / w;
                    let row_end = ((row + 1) * w).min(e);
                    out.push((self.bounds.y + row, self.bounds.x + s % w, self.bounds.x + (row_end - 1) % w + 1));
                    s = row_end;
                }
            }
            pos += r;
        }
        out
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        if !self.bounds.contains(x, y) {
            return false;
        }
        let idx = ((y - self.bounds.y) * self.bounds.w + (x - self.bounds.x)) as u64;
        let mut pos = 0u64;
        for (i, &r) in self.rle.iter().enumerate() {
            pos += r;
            if idx < pos {
                return i % 2 == 1;
            }
        }
        false
    }

    /// Same pixels inside `bounds`, which must cover the current bounds.
    pub fn reframe(&self, bounds: Rect) -> LabelMask {
        let mut bits = vec![false; normalise(bounds).area() as usize];
        for (y, x0, x1) in self.spans() {
            for x in x0..x1 {
                if bounds.contains(x, y) {
                    bits[((y - bounds.y) * bounds.w + (x - bounds.x)) as usize] = true;
                }
            }
        }
        LabelMask::from_bits(bounds, &bits).expect("bits sized to bounds")
    }

    /// `x y w h` on the first line, runs on the second.
    pub fn to_text(&self) -> String {
        let b = self.bounds;
        let mut s = format!("{} {} {} {}\n", b.x, b.y, b.w, b.h);
        for (i, r) in self.rle.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{r}");
        }
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<LabelMask, AnnotationError> {
        let bad = |m: &str| AnnotationError::MalformedMask(m.to_owned());
        let mut lines = text.lines();
        let head: Vec<i64> = lines
            .next()
            .ok_or_else(|| bad("missing bounds line"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad("bad bounds value")))
            .collect::<Result<_, _>>()?;
        let [x, y, w, h] = head[..] else {
            return Err(bad("bounds line needs 4 values"));
        };
        let runs = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| bad("bad run length")))
            .collect::<Result<Vec<u64>, _>>()?;
        LabelMask::from_runs(Rect::new(x, y, w, h), runs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrushMode {
    Fill,
    Erase,
}

/// Whether `p` lies within `sqrt(r2)` of segment `ab`. Squared
/// distances keep the test exact for integer coordinates and radii.
fn near_segment(p: Point, a: Point, b: Point, r2: f64) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (px, py) = (p.x - a.x, p.y - a.y);
    let len2 = dx * dx + dy * dy;
    let dot = px * dx + py * dy;
    if len2 == 0.0 || dot <= 0.0 {
        return px * px + py * py <= r2;
    }
    if dot >= len2 {
        let (qx, qy) = (p.x - b.x, p.y - b.y);
        return qx * qx + qy * qy <= r2;
    }
    let cross = px * dy - py * dx;
    cross * cross <= r2 * len2
}

/// Pixels within `radius` of the brush polyline.
pub(crate) fn brush_support(brush: &[Point], radius: f64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    if brush.is_empty() {
        return out;
    }
    let segs: Vec<(Point, Point)> = if brush.len() == 1 {
        vec![(brush[0], brush[0])]
    } else {
        brush.windows(2).map(|w| (w[0], w[1])).collect()
    };
    let minx = brush.iter().map(|p| p.x).fold(f64::MAX, f64::min);
    let maxx = brush.iter().map(|p| p.x).fold(f64::MIN, f64::max);
    let miny = brush.iter().map(|p| p.y).fold(f64::MAX, f64::min);
    let maxy = brush.iter().map(|p| p.y).fold(f64::MIN, f64::max);
    for y in (miny - radius).floor() as i64..=(maxy + radius).ceil() as i64 {
        for x in (minx - radius).floor() as i64..=(maxx + radius).ceil() as i64 {
            let p = Point::new(x as f64, y as f64);
            if segs.iter().any(|&(a, b)| near_segment(p, a, b, radius * radius)) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Paint (fill) or clear (erase) the pixels swept by a round brush.
/// Filling grows the bounds to cover the brush; erasing never changes
/// them.
pub fn mask_edit(mask: &LabelMask, brush: &[Point], radius: f64, mode: BrushMode) -> Result<LabelMask, AnnotationError> {
    if !(radius >= 1.0 && radius.is_finite()) {
        return Err(AnnotationError::InvalidBrush("radius must be at least 1".into()));
    }
    if brush.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(AnnotationError::InvalidBrush("non-finite brush point".into()));
    }
    let support = brush_support(brush, radius);
    if support.is_empty() {
        return Ok(mask.clone());
    }
    let bounds = match mode {
        BrushMode::Erase => mask.bounds,
        BrushMode::Fill => {
            let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
            for &(x, y) in &support {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
            mask.bounds.union(&Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
        }
    };
    let framed = if bounds == mask.bounds { mask.clone() } else { mask.reframe(bounds) };
    let mut bits = framed.to_bits();
    let value = mode == BrushMode::Fill;
    for (x, y) in support {
        if bounds.contains(x, y) {
            bits[((y - bounds.y) * bounds.w + (x - bounds.x)) as usize] = value;
        }
    }
    LabelMask::from_bits(bounds, &bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_start_with_zeros() {
        let m = LabelMask::from_bits(Rect::new(0, 0, 3, 1), &[true, true, false]).unwrap();
        assert_eq!(m.runs(), &[0, 2, 1]);
        assert_eq!(m.area(), 2);
        assert_eq!(LabelMask::empty(Rect::new(5, 5, 2, 2)).runs(), &[4]);
    }

    #[test]
    fn run_sum_must_match_bounds() {
        assert!(LabelMask::from_runs(Rect::new(0, 0, 2, 2), vec![1, 2]).is_err());
        let m = LabelMask::from_runs(Rect::new(0, 0, 2, 2), vec![1, 0, 0, 3]).unwrap();
        assert_eq!(m.runs(), &[1, 3]);
        let m = LabelMask::from_runs(Rect::new(0, 0, 2, 2), vec![0, 0, 4, 0]).unwrap();
        assert_eq!(m.runs(), &[4]);
    }

    #[test]
    fn text_round_trip() {
        let m = LabelMask::from_bits(Rect::new(-2, 7, 2, 2), &[false, true, true, false]).unwrap();
        assert_eq!(m.to_text(), "-2 7 2 2\n1 2 1\n");
        assert_eq!(LabelMask::from_text(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn spans_split_at_row_ends() {
        let m = LabelMask::from_bits(Rect::new(10, 20, 2, 2), &[false, true, true, true]).unwrap();
        assert_eq!(m.spans(), vec![(20, 11, 12), (21, 10, 12)]);
        assert!(m.contains(11, 20));
        assert!(!m.contains(10, 20));
    }

    #[test]
    fn fill_grows_erase_keeps_bounds() {
        let m = LabelMask::empty(Rect::new(0, 0, 4, 4));
        let filled = mask_edit(&m, &[Point::new(5.0, 1.0)], 1.0, BrushMode::Fill).unwrap();
        assert_eq!(filled.bounds, Rect::new(0, 0, 7, 4));
        assert_eq!(filled.area(), 5);
        let erased = mask_edit(&filled, &[Point::new(5.0, 1.0)], 1.0, BrushMode::Erase).unwrap();
        assert_eq!(erased.bounds, filled.bounds);
        assert!(erased.is_empty());
        assert!(mask_edit(&m, &[Point::new(1.0, 1.0)], 0.5, BrushMode::Fill).is_err());
    }
}
