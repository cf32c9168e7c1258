//! Whole-slide image platform core.
//!
//! The crate is organised by subsystem:
//!
//! * [`slide_io`] parses pyramidal tiled TIFF files and the internal
//!   directory pyramid format and exposes random-access region reads.
//! * [`tiler`] holds the Deep Zoom mathematics, pyramid construction,
//!   tile rendering, thumbnails and magnification stops.
//! * [`annotation`] is the annotation data model and geometry: gap
//!   closing for freehand strokes, polygon rasterisation, RLE masks and
//!   the replayable edit log.
//! * [`analysis`] contains the analyzer registry, the classical
//!   analyzers and the worker pool that runs analysis tasks.
//! * [`store`] persists slides, annotations, tasks and reports.
//! * [`platform`] wires the above together; [`api`] exposes it over HTTP
//!   and the `pimip` binary exposes it on the command line.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod annotation;
pub mod api;
pub mod config;
pub mod geom;
pub mod pixel;
pub mod platform;
pub mod slide_io;
pub mod store;
pub mod tiler;

pub use geom::{Point, Rect};
pub use pixel::PixelBuffer;

pub(crate) fn now_millis() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}
