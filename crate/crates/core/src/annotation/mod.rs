//! Annotation model and geometry.
//!
//! Coordinates are base-level pixel positions. A pixel `(i, j)` is the
//! lattice point `(i, j)`, so a ring through `(0,0)` and `(10,10)` covers
//! an 11×11 block once rasterised.

mod edits;
mod gaps;
mod mask;
mod model;
mod raster;
mod stroke;

pub use edits::{replay, Edit, EditOp, ReplayState};
pub use gaps::{close_gaps, close_polygon, GapPolicy, PointerType, StrokePoint, StrokeSegment};
pub use mask::{mask_edit, BrushMode, LabelMask};
pub use model::{
    flat_coords,
    bounding_rect, make_mask, make_point, make_polygon, make_rectangle, query_viewport, AnnotationKind,
    AnnotationRecord, NewAnnotation, Rgba,
};
pub use raster::{point_in_ring, rasterize_polygon};
pub use stroke::{StrokeBuffer, StrokeKey};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnnotationError {
    #[error("no stroke segments supplied")]
    EmptyInput,
    #[error("stroke segment {0} is invalid: {1}")]
    InvalidSegment(usize, String),
    #[error("polyline has fewer than 3 distinct points")]
    DegeneratePolyline,
    #[error("rectangle corners coincide on an axis")]
    DegenerateRect,
    #[error("coordinate ({x}, {y}) lies outside the {width}x{height} slide")]
    OutOfBounds { x: f64, y: f64, width: u32, height: u32 },
    #[error("polygon does not intersect the clip bounds")]
    EmptyIntersection,
    #[error("invalid coordinates: {0}")]
    InvalidCoords(String),
    #[error("invalid brush: {0}")]
    InvalidBrush(String),
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("invalid edit at seq {seq}: {reason}")]
    InvalidEdit { seq: usize, reason: String },
    #[error("malformed mask: {0}")]
    MalformedMask(String),
}

impl AnnotationError {
    pub fn code(&self) -> &'static str {
        match self {
            AnnotationError::EmptyInput => "EmptyInput",
            AnnotationError::InvalidSegment(..) => "InvalidSegment",
            AnnotationError::DegeneratePolyline => "DegeneratePolyline",
            AnnotationError::DegenerateRect => "DegenerateRect",
            AnnotationError::OutOfBounds { .. } => "OutOfBounds",
            AnnotationError::EmptyIntersection => "EmptyIntersection",
            AnnotationError::InvalidCoords(_) => "InvalidCoords",
            AnnotationError::InvalidBrush(_) => "InvalidBrush",
            AnnotationError::NothingToUndo => "NothingToUndo",
            AnnotationError::InvalidEdit { .. } => "InvalidEdit",
            AnnotationError::MalformedMask(_) => "MalformedMask",
        }
    }
}
