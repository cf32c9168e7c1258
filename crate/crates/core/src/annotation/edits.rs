use serde::{Deserialize, Serialize};

use super::mask::{mask_edit, BrushMode, LabelMask};
use super::model::{bounds_vertices, flat_coords, AnnotationKind, AnnotationRecord, Rgba};
use super::raster::rasterize_polygon;
use super::AnnotationError;
use crate::geom::{Point, Rect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    Create {
        record: AnnotationRecord,
    },
    UpdateCoords {
        #[serde(with = "flat_coords")]
        coords: Vec<Point>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        color: Option<Rgba>,
    },
    MaskFill {
        #[serde(with = "flat_coords")]
        brush: Vec<Point>,
        radius: f64,
        /// Slide bounds the edited mask is cropped to.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip: Option<Rect>,
    },
    MaskErase {
        #[serde(with = "flat_coords")]
        brush: Vec<Point>,
        radius: f64,
        /// Slide bounds the edited mask is cropped to.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip: Option<Rect>,
    },
    Undo,
    Clear,
}

impl EditOp {
    pub fn name(&self) -> &'static str {
        match self {
            EditOp::Create { .. } => "create",
            EditOp::UpdateCoords { .. } => "update_coords",
            EditOp::MaskFill { .. } => "mask_fill",
            EditOp::MaskErase { .. } => "mask_erase",
            EditOp::Undo => "undo",
            EditOp::Clear => "clear",
        }
    }
}

/// One entry of an annotation's append-only edit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    /// 1-based, gapless.
    pub seq: u64,
    pub user_id: String,
    pub at: i64,
    #[serde(flatten)]
    pub op: EditOp,
}

/// Materialised state after replaying a log, with the undo stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayState {
    pub record: AnnotationRecord,
    history: Vec<AnnotationRecord>,
}

impl ReplayState {
    pub fn can_undo(&self) -> bool {
        !self.history.is_empty()
    }
}

fn mask_of(rec: &AnnotationRecord) -> Result<LabelMask, String> {
    if let Some(m) = &rec.mask {
        return Ok(m.clone());
    }
    match rec.kind {
        AnnotationKind::Polygon => {
            rasterize_polygon(&rec.coords, Rect::new(i64::MIN / 4, i64::MIN / 4, i64::MAX / 2, i64::MAX / 2))
                .map_err(|e| e.to_string())
        }
        AnnotationKind::Rectangle => {
            let mut ring = rec.coords.clone();
            ring.push(ring[0]);
            rasterize_polygon(&ring, Rect::new(i64::MIN / 4, i64::MIN / 4, i64::MAX / 2, i64::MAX / 2))
                .map_err(|e| e.to_string())
        }
        _ => Err(format!("{} annotations have no mask", rec.kind.as_str())),
    }
}

impl ReplayState {
    /// Apply the next edit. The resulting version is the log length.
    pub fn apply(state: Option<ReplayState>, edit: &Edit) -> Result<ReplayState, AnnotationError> {
        let seq = edit.seq as usize;
        let invalid = |reason: String| AnnotationError::InvalidEdit { seq, reason };
        let mut next = match (&edit.op, state) {
            (EditOp::Create { record }, None) => {
                let mut tomb = record.clone();
                tomb.deleted = true;
                ReplayState {
                    record: record.clone(),
                    history: vec![tomb],
                }
            }
            (EditOp::Create { .. }, Some(_)) => return Err(invalid("annotation already created".into())),
            (_, None) => return Err(invalid("log must start with create".into())),
            (EditOp::Undo, Some(mut s)) => {
                let prev = s.history.pop().ok_or(AnnotationError::NothingToUndo)?;
                s.record = prev;
                s
            }
            (op, Some(mut s)) => {
                if s.record.deleted {
                    return Err(invalid("annotation is deleted".into()));
                }
                let prev = s.record.clone();
                match op {
                    EditOp::UpdateCoords { coords, label, color } => {
                        if s.record.kind == AnnotationKind::Mask && *coords != s.record.coords {
                            return Err(invalid("mask coordinates follow the raster".into()));
                        }
                        s.record.coords = coords.clone();
                        if let Some(l) = label {
                            s.record.label = l.clone();
                        }
                        if let Some(c) = color {
                            s.record.color = *c;
                        }
                    }
                    EditOp::MaskFill { brush, radius, clip } | EditOp::MaskErase { brush, radius, clip } => {
                        let mode = if matches!(op, EditOp::MaskFill { .. }) {
                            BrushMode::Fill
                        } else {
                            BrushMode::Erase
                        };
                        let base = mask_of(&s.record).map_err(invalid)?;
                        let mut m = mask_edit(&base, brush, *radius, mode)?;
                        if let Some(b) = clip.and_then(|c| m.bounds.intersect(&c)) {
                            m = m.reframe(b);
                        }
                        if s.record.kind != AnnotationKind::Mask {
                            s.record.kind = AnnotationKind::Mask;
                        }
                        s.record.coords = bounds_vertices(m.bounds);
                        s.record.mask = Some(m);
                    }
                    EditOp::Clear => s.record.deleted = true,
                    EditOp::Create { .. } | EditOp::Undo => unreachable!("handled above"),
                }
                s.history.push(prev);
                s
            }
        };
        next.record.version = edit.seq;
        next.record.updated_at = edit.at;
        Ok(next)
    }
}

/// Rebuild an annotation from its edit log.
pub fn replay(log: &[Edit]) -> Result<ReplayState, AnnotationError> {
    let mut state: Option<ReplayState> = None;
    for (i, e) in log.iter().enumerate() {
        if e.seq != i as u64 + 1 {
            return Err(AnnotationError::InvalidEdit {
                seq: e.seq as usize,
                reason: format!("expected seq {}", i + 1),
            });
        }
        state = Some(ReplayState::apply(state, e)?);
    }
    state.ok_or(AnnotationError::EmptyInput)
}
