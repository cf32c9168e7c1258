use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::mask::LabelMask;
use super::AnnotationError;
use crate::geom::{Point, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Point,
    Rectangle,
    Polygon,
    Mask,
}

impl AnnotationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnnotationKind::Point => "point",
            AnnotationKind::Rectangle => "rectangle",
            AnnotationKind::Polygon => "polygon",
            AnnotationKind::Mask => "mask",
        }
    }
}

impl FromStr for AnnotationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "point" => Ok(AnnotationKind::Point),
            "rectangle" => Ok(AnnotationKind::Rectangle),
            "polygon" => Ok(AnnotationKind::Polygon),
            "mask" => Ok(AnnotationKind::Mask),
            other => Err(format!("unknown annotation kind `{other}`")),
        }
    }
}

/// RGBA colour, written as `#rrggbbaa`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rgba(pub [u8; 4]);

impl Default for Rgba {
    fn default() -> Self {
        Rgba([255, 0, 0, 255])
    }
}

impl fmt::Display for Rgba {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [r, g, b, a] = self.0;
        write!(f, "#{r:02x}{g:02x}{b:02x}{a:02x}")
    }
}

impl FromStr for Rgba {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let hex = s.strip_prefix('#').unwrap_or(s);
        if !(hex.len() == 6 || hex.len() == 8) || !hex.is_ascii() {
            return Err(format!("bad colour `{s}`"));
        }
        let byte = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| format!("bad colour `{s}`"));
        let a = if hex.len() == 8 { byte(6)? } else { 255 };
        Ok(Rgba([byte(0)?, byte(2)?, byte(4)?, a]))
    }
}

impl Serialize for Rgba {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rgba {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for `[x0, y0, x1, y1, ...]` coordinate arrays.
pub mod flat_coords {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::geom::Point;

    pub fn serialize<S: Serializer>(coords: &[Point], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(coords.iter().flat_map(|p| [p.x, p.y]))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Point>, D::Error> {
        let flat = Vec::<f64>::deserialize(d)?;
        if flat.len() % 2 != 0 {
            return Err(serde::de::Error::custom("coordinate array has odd length"));
        }
        Ok(flat.chunks(2).map(|c| Point::new(c[0], c[1])).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub slide_id: String,
    pub user_id: String,
    pub kind: AnnotationKind,
    #[serde(with = "flat_coords")]
    pub coords: Vec<Point>,
    pub label: String,
    #[serde(default)]
    pub color: Rgba,
    pub version: u64,
    #[serde(default)]
    pub deleted: bool,
    pub created_at: i64,
    pub updated_at: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<LabelMask>,
}

/// Client payload for a new annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewAnnotation {
    pub kind: AnnotationKind,
    #[serde(with = "flat_coords")]
    pub coords: Vec<Point>,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub color: Option<Rgba>,
    #[serde(default)]
    pub mask: Option<LabelMask>,
}

impl NewAnnotation {
    pub fn into_record(self, slide_id: &str, user_id: &str, dims: (u32, u32)) -> Result<AnnotationRecord, AnnotationError> {
        let color = self.color.unwrap_or_default();
        let mut rec = match self.kind {
            AnnotationKind::Point => {
                let [p] = self.coords[..] else {
                    return Err(AnnotationError::InvalidCoords("a point has exactly one coordinate".into()));
                };
                make_point(slide_id, user_id, dims, p, &self.label)?
            }
            AnnotationKind::Rectangle => match self.coords[..] {
                [a, b] => make_rectangle(slide_id, user_id, dims, a, b, &self.label)?,
                [a, _, c, _] => {
                    let r = make_rectangle(slide_id, user_id, dims, a, c, &self.label)?;
                    r.validate(dims)?;
                    if r.coords.iter().any(|v| !self.coords.contains(v)) {
                        return Err(AnnotationError::InvalidCoords("vertices are not an axis-aligned rectangle".into()));
                    }
                    r
                }
                _ => return Err(AnnotationError::InvalidCoords("a rectangle has 2 corners or 4 vertices".into())),
            },
            AnnotationKind::Polygon => make_polygon(slide_id, user_id, dims, &self.coords, &self.label)?,
            AnnotationKind::Mask => {
                let mask = self
                    .mask
                    .ok_or_else(|| AnnotationError::InvalidCoords("mask annotation without mask".into()))?;
                make_mask(slide_id, user_id, dims, mask, &self.label)?
            }
        };
        rec.color = color;
        Ok(rec)
    }
}

fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

fn check_bounds(p: Point, (w, h): (u32, u32)) -> Result<(), AnnotationError> {
    let inside = p.x.is_finite() && p.y.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x <= (w as f64 - 1.0) && p.y <= (h as f64 - 1.0);
    if inside {
        Ok(())
    } else {
        Err(AnnotationError::OutOfBounds {
            x: p.x,
            y: p.y,
            width: w,
            height: h,
        })
    }
}

fn record(slide_id: &str, user_id: &str, kind: AnnotationKind, coords: Vec<Point>, label: &str) -> AnnotationRecord {
    let now = crate::now_millis();
    AnnotationRecord {
        id: new_id(),
        slide_id: slide_id.to_owned(),
        user_id: user_id.to_owned(),
        kind,
        coords,
        label: label.to_owned(),
        color: Rgba::default(),
        version: 1,
        deleted: false,
        created_at: now,
        updated_at: now,
        mask: None,
    }
}

pub fn make_point(
    slide_id: &str,
    user_id: &str,
    dims: (u32, u32),
    p: Point,
    label: &str,
) -> Result<AnnotationRecord, AnnotationError> {
    check_bounds(p, dims)?;
    Ok(record(slide_id, user_id, AnnotationKind::Point, vec![p], label))
}

/// Corners are clamped to the slide, then expanded clockwise from the
/// top-left vertex.
pub fn make_rectangle(
    slide_id: &str,
    user_id: &str,
    dims: (u32, u32),
    a: Point,
    b: Point,
    label: &str,
) -> Result<AnnotationRecord, AnnotationError> {
    if ![a.x, a.y, b.x, b.y].iter().all(|v| v.is_finite()) {
        return Err(AnnotationError::InvalidCoords("non-finite corner".into()));
    }
    let maxx = dims.0.saturating_sub(1) as f64;
    let maxy = dims.1.saturating_sub(1) as f64;
    let (x0, x1) = (a.x.min(b.x).clamp(0.0, maxx), a.x.max(b.x).clamp(0.0, maxx));
    let (y0, y1) = (a.y.min(b.y).clamp(0.0, maxy), a.y.max(b.y).clamp(0.0, maxy));
    if x0 == x1 || y0 == y1 {
        return Err(AnnotationError::DegenerateRect);
    }
    let coords = vec![
        Point::new(x0, y0),
        Point::new(x1, y0),
        Point::new(x1, y1),
        Point::new(x0, y1),
    ];
    Ok(record(slide_id, user_id, AnnotationKind::Rectangle, coords, label))
}

pub fn make_polygon(
    slide_id: &str,
    user_id: &str,
    dims: (u32, u32),
    ring: &[Point],
    label: &str,
) -> Result<AnnotationRecord, AnnotationError> {
    let rec = record(slide_id, user_id, AnnotationKind::Polygon, ring.to_vec(), label);
    rec.validate(dims)?;
    Ok(rec)
}

/// A mask annotation; its coordinates are the vertices of the mask bounds.
pub fn make_mask(
    slide_id: &str,
    user_id: &str,
    dims: (u32, u32),
    mask: LabelMask,
    label: &str,
) -> Result<AnnotationRecord, AnnotationError> {
    if mask.bounds.is_empty() {
        return Err(AnnotationError::InvalidCoords("mask bounds are empty".into()));
    }
    let mut rec = record(slide_id, user_id, AnnotationKind::Mask, bounds_vertices(mask.bounds), label);
    rec.mask = Some(mask);
    rec.validate(dims)?;
    Ok(rec)
}

pub(crate) fn bounds_vertices(r: Rect) -> Vec<Point> {
    let (x0, y0) = (r.x as f64, r.y as f64);
    let (x1, y1) = ((r.right() - 1) as f64, (r.bottom() - 1) as f64);
    vec![
        Point::new(x0, y0),
        Point::new(x1, y0),
        Point::new(x1, y1),
        Point::new(x0, y1),
    ]
}

/// Smallest pixel rectangle covering every coordinate.
pub fn bounding_rect(coords: &[Point]) -> Rect {
    if coords.is_empty() {
        return Rect::new(0, 0, 0, 0);
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in coords {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let (x0, y0) = (x0.floor() as i64, y0.floor() as i64);
    Rect::new(x0, y0, x1.floor() as i64 + 1 - x0, y1.floor() as i64 + 1 - y0)
}

impl AnnotationRecord {
    pub fn bbox(&self) -> Rect {
        let r = bounding_rect(&self.coords);
        match &self.mask {
            Some(m) => r.union(&m.bounds),
            None => r,
        }
    }

    pub fn is_live(&self) -> bool {
        !self.deleted
    }

    /// Check the per-kind invariants and slide bounds.
    pub fn validate(&self, dims: (u32, u32)) -> Result<(), AnnotationError> {
        let bad = |m: &str| Err(AnnotationError::InvalidCoords(m.to_owned()));
        if self.version < 1 {
            return bad("version must be at least 1");
        }
        for p in &self.coords {
            check_bounds(*p, dims)?;
        }
        let c = &self.coords;
        match self.kind {
            AnnotationKind::Point if c.len() != 1 => bad("a point has exactly one coordinate"),
            AnnotationKind::Rectangle => {
                if c.len() != 4 {
                    return bad("a rectangle has four vertices");
                }
                let axis_aligned = c[0].y == c[1].y && c[1].x == c[2].x && c[2].y == c[3].y && c[3].x == c[0].x
                    || c[0].x == c[1].x && c[1].y == c[2].y && c[2].x == c[3].x && c[3].y == c[0].y;
                if !axis_aligned || c[0].x == c[2].x || c[0].y == c[2].y {
                    return bad("vertices are not an axis-aligned rectangle");
                }
                Ok(())
            }
            // Mask coords are the bounds vertices and may collapse to one pixel.
            AnnotationKind::Mask if self.mask.is_none() => bad("mask annotation without mask"),
            AnnotationKind::Polygon => {
                if c.len() < 4 || c.first() != c.last() {
                    return bad("a polygon is a closed ring of at least 3 distinct points");
                }
                let mut distinct: Vec<(u64, u64)> = c.iter().map(|p| (p.x.to_bits(), p.y.to_bits())).collect();
                distinct.sort_unstable();
                distinct.dedup();
                if distinct.len() < 3 {
                    return Err(AnnotationError::DegeneratePolyline);
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Live records whose bounding box intersects `rect`.
pub fn query_viewport<'a, I>(records: I, rect: Rect) -> Vec<AnnotationRecord>
where
    I: IntoIterator<Item = &'a AnnotationRecord>,
{
    records
        .into_iter()
        .filter(|r| r.is_live() && r.bbox().intersect(&rect).is_some())
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIMS: (u32, u32) = (1000, 600);

    #[test]
    fn point_bounds() {
        let r = make_point("s", "u", DIMS, Point::new(100.0, 200.0), "n").unwrap();
        assert_eq!(r.coords, vec![Point::new(100.0, 200.0)]);
        assert_eq!(r.version, 1);
        assert!(matches!(
            make_point("s", "u", DIMS, Point::new(1001.0, 0.0), "n"),
            Err(AnnotationError::OutOfBounds { .. })
        ));
        let other = make_point("s", "v", DIMS, Point::new(100.0, 200.0), "n").unwrap();
        assert_ne!(r.id, other.id);
    }

    #[test]
    fn rectangle_canonical_order() {
        let want = vec![
            Point::new(10.0, 10.0),
            Point::new(30.0, 10.0),
            Point::new(30.0, 40.0),
            Point::new(10.0, 40.0),
        ];
        let a = make_rectangle("s", "u", DIMS, Point::new(10.0, 10.0), Point::new(30.0, 40.0), "").unwrap();
        let b = make_rectangle("s", "u", DIMS, Point::new(30.0, 40.0), Point::new(10.0, 10.0), "").unwrap();
        assert_eq!(a.coords, want);
        assert_eq!(b.coords, want);
        assert_eq!(
            make_rectangle("s", "u", DIMS, Point::new(10.0, 10.0), Point::new(10.0, 40.0), "").unwrap_err(),
            AnnotationError::DegenerateRect
        );
    }

    #[test]
    fn flat_coordinate_wire_format() {
        let r = make_point("s", "u", DIMS, Point::new(1.5, 2.0), "n").unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["coords"], serde_json::json!([1.5, 2.0]));
        assert_eq!(v["color"], "#ff0000ff");
        let back: AnnotationRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn polygon_must_be_closed() {
        let open = [Point::new(0.0, 0.0), Point::new(5.0, 0.0), Point::new(5.0, 5.0)];
        assert!(make_polygon("s", "u", DIMS, &open, "").is_err());
        let mut closed = open.to_vec();
        closed.push(open[0]);
        assert!(make_polygon("s", "u", DIMS, &closed, "").is_ok());
    }

    #[test]
    fn rgba_parsing() {
        assert_eq!("#00ff0080".parse::<Rgba>().unwrap(), Rgba([0, 255, 0, 128]));
        assert_eq!("0000ff".parse::<Rgba>().unwrap(), Rgba([0, 0, 255, 255]));
        assert!("#zz".parse::<Rgba>().is_err());
    }
}
