use super::mask::{LabelMask, RleBuilder};
use super::AnnotationError;
use crate::geom::{Point, Rect};

fn snap(ring: &[Point]) -> Result<Vec<(i64, i64)>, AnnotationError> {
    ring.iter()
        .map(|p| {
            if p.x.is_finite() && p.y.is_finite() && p.x.abs() < 1e15 && p.y.abs() < 1e15 {
                Ok((p.x.round() as i64, p.y.round() as i64))
            } else {
                Err(AnnotationError::InvalidCoords("non-finite ring vertex".into()))
            }
        })
        .collect()
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn ceil_div(n: i128, d: i128) -> i128 {
    let q = n / d;
    if (n % d != 0) && ((n < 0) == (d < 0)) {
        q + 1
    } else {
        q
    }
}

/// Nonzero-winding membership of a lattice point, boundary included.
/// Vertices are snapped to the nearest integer first.
pub fn point_in_ring(ring: &[Point], x: i64, y: i64) -> bool {
    let Ok(v) = snap(ring) else {
        return false;
    };
    let mut winding = 0i64;
    for w in v.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let cross = (x1 - x0) as i128 * (y - y0) as i128 - (x - x0) as i128 * (y1 - y0) as i128;
        if cross == 0 && x >= x0.min(x1) && x <= x0.max(x1) && y >= y0.min(y1) && y <= y0.max(y1) {
            return true;
        }
        if y0 <= y && y < y1 && cross > 0 {
            winding += 1;
        } else if y1 <= y && y < y0 && cross < 0 {
            winding -= 1;
        }
    }
    winding != 0
}

/// Scanline fill of a closed ring with the nonzero winding rule. Pixels
/// on the boundary are set. The mask covers the ring's bounding box
/// clipped to `clip`.
pub fn rasterize_polygon(ring: &[Point], clip: Rect) -> Result<LabelMask, AnnotationError> {
    if ring.len() < 4 || ring.first() != ring.last() {
        return Err(AnnotationError::InvalidCoords("ring must be closed".into()));
    }
    let v = snap(ring)?;
    let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for &(x, y) in &v {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let bbox = Rect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
    let bounds = bbox.intersect(&clip).ok_or(AnnotationError::EmptyIntersection)?;
    let (bw, bh) = (bounds.w as usize, bounds.h as usize);
    let mut rows: Vec<Vec<bool>> = vec![vec![false; bw]; bh];

    let edges: Vec<((i64, i64), (i64, i64))> = v.windows(2).map(|w| (w[0], w[1])).collect();
    let mut events: Vec<(i64, i64)> = Vec::new();
    for (r, row) in rows.iter_mut().enumerate() {
        let y = bounds.y + r as i64;
        events.clear();
        for &((ax, ay), (bx, by)) in &edges {
            let dir = if ay <= y && y < by {
                1
            } else if by <= y && y < ay {
                -1
            } else {
                continue;
            };
            // Crossing at x = ax + (y - ay)(bx - ax)/(by - ay); pixel i is
            // right of it from ceil(x) on.
            let num = ax as i128 * (by - ay) as i128 + (y - ay) as i128 * (bx - ax) as i128;
            let c = ceil_div(num, (by - ay) as i128);
            events.push((c.clamp(i64::MIN as i128, i64::MAX as i128) as i64, dir));
        }
        events.sort_unstable();
        let mut w = 0i64;
        let mut i = 0;
        while i < events.len() {
            let start = events[i].0;
            while i < events.len() && events[i].0 == start {
                w += events[i].1;
                i += 1;
            }
            if w != 0 {
                let end = events.get(i).map_or(start, |e| e.0);
                let lo = start.max(bounds.x);
                let hi = end.min(bounds.right());
                for x in lo..hi {
                    row[(x - bounds.x) as usize] = true;
                }
            }
        }
    }

    for &((ax, ay), (bx, by)) in &edges {
        let g = gcd(bx - ax, by - ay);
        let (sx, sy, n) = if g == 0 { (0, 0, 0) } else { ((bx - ax) / g, (by - ay) / g, g) };
        for k in 0..=n {
            let (x, y) = (ax + k * sx, ay + k * sy);
            if bounds.contains(x, y) {
                rows[(y - bounds.y) as usize][(x - bounds.x) as usize] = true;
            }
        }
    }

    let mut b = RleBuilder::new();
    for row in &rows {
        for &v in row {
            b.push(v, 1);
        }
    }
    Ok(b.finish(bounds))
}
