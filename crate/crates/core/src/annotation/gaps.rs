use serde::{Deserialize, Serialize};

use super::AnnotationError;
use crate::geom::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PointerType {
    #[default]
    Mouse,
    Stylus,
    Touch,
}

/// A captured point; `t` is milliseconds since the stroke started.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokePoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl StrokePoint {
    pub fn new(x: f64, y: f64, t: f64) -> Self {
        StrokePoint { x, y, t }
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Points captured between one pen-down and the following pen-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeSegment {
    pub points: Vec<StrokePoint>,
    #[serde(default)]
    pub pointer_type: PointerType,
    #[serde(default = "unit_zoom")]
    pub device_zoom: f64,
}

fn unit_zoom() -> f64 {
    1.0
}

impl StrokeSegment {
    pub fn new(points: Vec<StrokePoint>, pointer_type: PointerType, device_zoom: f64) -> Self {
        StrokeSegment {
            points,
            pointer_type,
            device_zoom,
        }
    }

    fn check(&self, index: usize) -> Result<(), AnnotationError> {
        let bad = |m: &str| Err(AnnotationError::InvalidSegment(index, m.to_owned()));
        if self.points.is_empty() {
            return bad("no points");
        }
        if !(self.device_zoom > 0.0 && self.device_zoom.is_finite()) {
            return bad("device_zoom must be positive");
        }
        if self.points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.t.is_finite())) {
            return bad("non-finite coordinate");
        }
        if self.points.windows(2).any(|w| w[1].t < w[0].t) {
            return bad("timestamps decrease");
        }
        Ok(())
    }
}

/// Thresholds for reconnecting accidental pen lifts. `delta_px` is in
/// viewport pixels and is divided by the capture zoom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPolicy {
    pub tau_ms: f64,
    pub delta_px: f64,
}

impl Default for GapPolicy {
    fn default() -> Self {
        GapPolicy {
            tau_ms: 500.0,
            delta_px: 40.0,
        }
    }
}

impl GapPolicy {
    /// Whether segment `b` continues segment `a`. A zero threshold turns
    /// merging off entirely.
    pub fn joins(&self, a: &StrokeSegment, b: &StrokeSegment) -> bool {
        if self.tau_ms <= 0.0 || self.delta_px <= 0.0 {
            return false;
        }
        let (end, start) = match (a.points.last(), b.points.first()) {
            (Some(e), Some(s)) => (e, s),
            _ => return false,
        };
        let gap = start.t - end.t;
        let reach = self.delta_px / a.device_zoom;
        gap <= self.tau_ms && end.point().distance(&start.point()) <= reach
    }
}

/// Split captured segments into polylines, concatenating neighbours the
/// policy joins. Bridges are implicit edges between existing endpoints,
/// so every captured point appears exactly once and in order.
pub fn close_gaps(segments: &[StrokeSegment], policy: &GapPolicy) -> Result<Vec<Vec<Point>>, AnnotationError> {
    if segments.is_empty() {
        return Err(AnnotationError::EmptyInput);
    }
    for (i, s) in segments.iter().enumerate() {
        s.check(i)?;
    }
    let mut out: Vec<Vec<Point>> = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        let pts = seg.points.iter().map(StrokePoint::point);
        if i > 0 && policy.joins(&segments[i - 1], seg) {
            out.last_mut().expect("previous polyline").extend(pts);
        } else {
            out.push(pts.collect());
        }
    }
    Ok(out)
}

/// Drop consecutive duplicates and close the ring.
pub fn close_polygon(polyline: &[Point]) -> Result<Vec<Point>, AnnotationError> {
    let mut ring: Vec<Point> = Vec::with_capacity(polyline.len() + 1);
    for p in polyline {
        if ring.last() != Some(p) {
            ring.push(*p);
        }
    }
    let closed = ring.len() > 1 && ring.first() == ring.last();
    let distinct = if closed { ring.len() - 1 } else { ring.len() };
    if distinct < 3 {
        return Err(AnnotationError::DegeneratePolyline);
    }
    if !closed {
        ring.push(ring[0]);
    }
    Ok(ring)
}
