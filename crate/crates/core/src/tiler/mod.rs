//! Deep Zoom addressing, pyramid construction and tile rendering.

mod build;
mod deepzoom;
mod downsample;
mod magnification;
mod render;

pub use build::{build_pyramid, build_pyramid_from_slide, PyramidMeta, StorageLayout};
pub use deepzoom::{dz_level_count, dz_level_dims, dzi_document, tile_grid, tile_rect, DeepZoomLayout};
pub use downsample::downsample_2x;
pub use magnification::{magnification_to_downsample, zoom_target, MagnificationMap, ZoomTarget};
pub use render::{make_thumbnail, render_tile, render_tile_pixels};

use crate::slide_io::SlideError;

#[derive(Debug, thiserror::Error)]
pub enum TilerError {
    #[error("deep zoom level {level} out of range (max {max_level})")]
    LevelOutOfRange { level: u32, max_level: u32 },
    #[error("tile ({col}, {row}) outside the {cols}x{rows} grid of level {level}")]
    TileOutOfRange {
        level: u32,
        col: u32,
        row: u32,
        cols: u32,
        rows: u32,
    },
    #[error("unsupported tile format `{0}`")]
    UnsupportedFormat(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("unknown magnification stop `{0}`")]
    UnknownStop(String),
    #[error("stop {stop}x exceeds the {base}x scan magnification")]
    StopExceedsBase { stop: f64, base: f64 },
    #[error("slide has no base magnification")]
    NoMagnification,
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error(transparent)]
    Slide(#[from] SlideError),
}

impl TilerError {
    pub fn code(&self) -> &'static str {
        match self {
            TilerError::LevelOutOfRange { .. } => "LevelOutOfRange",
            TilerError::TileOutOfRange { .. } => "TileOutOfRange",
            TilerError::UnsupportedFormat(_) => "UnsupportedFormat",
            TilerError::InvalidLayout(_) => "InvalidLayout",
            TilerError::UnknownStop(_) => "UnknownStop",
            TilerError::StopExceedsBase { .. } => "StopExceedsBase",
            TilerError::NoMagnification => "NoMagnification",
            TilerError::IoFailure(_) => "IoFailure",
            TilerError::Slide(e) => e.code(),
        }
    }
}
