//! Pyramidal slide access: tiled TIFF / BigTIFF parsing, the internal
//! directory pyramid format, and uniform region reads over both.

mod codec;
mod pyramid_dir;
mod slide;
mod source;
pub mod tiff;
pub mod tiff_writer;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use codec::{StandardCodec, TileCodec};
pub(crate) use codec::encode_image as encode_tile;
pub(crate) use pyramid_dir::{halved_dims, tile_path};
pub use pyramid_dir::{Manifest, TileFormat, MANIFEST_FILE};
pub use slide::Slide;
pub use source::{FileSource, ReadAt};

#[derive(Debug, thiserror::Error)]
pub enum SlideError {
    #[error("not a TIFF file (bad byte-order mark)")]
    BadMagic,
    #[error("unsupported TIFF version word {0}")]
    UnsupportedVersion(u16),
    #[error("IFD chain revisits offset {0}")]
    CyclicChain(u64),
    #[error("file truncated: need {needed} bytes at offset {offset}")]
    TruncatedFile { offset: u64, needed: u64 },
    #[error("tag {tag} uses unsupported field type {field_type}")]
    UnsupportedTagType { tag: u16, field_type: u16 },
    #[error("invalid image directory: {0}")]
    InvalidDirectory(String),
    #[error("tile ({col}, {row}) outside the grid of level {level}")]
    TileOutOfRange { level: usize, col: u32, row: u32 },
    #[error("unsupported compression scheme {0}")]
    UnsupportedCompression(u16),
    #[error("level {0} out of range")]
    LevelOutOfRange(usize),
    #[error("region has zero area")]
    ZeroAreaRect,
    #[error("region does not intersect the level bounds")]
    RegionOutOfBounds,
    #[error("no manifest in {0}")]
    MissingManifest(PathBuf),
    #[error("manifest disagrees with stored tiles: {0}")]
    ManifestMismatch(String),
    #[error("tile decode failed: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SlideError {
    pub fn code(&self) -> &'static str {
        match self {
            SlideError::BadMagic => "BadMagic",
            SlideError::UnsupportedVersion(_) => "UnsupportedVersion",
            SlideError::CyclicChain(_) => "CyclicChain",
            SlideError::TruncatedFile { .. } => "TruncatedFile",
            SlideError::UnsupportedTagType { .. } => "UnsupportedTagType",
            SlideError::InvalidDirectory(_) => "InvalidDirectory",
            SlideError::TileOutOfRange { .. } => "TileOutOfRange",
            SlideError::UnsupportedCompression(_) => "UnsupportedCompression",
            SlideError::LevelOutOfRange(_) => "LevelOutOfRange",
            SlideError::ZeroAreaRect => "ZeroAreaRect",
            SlideError::RegionOutOfBounds => "RegionOutOfBounds",
            SlideError::MissingManifest(_) => "MissingManifest",
            SlideError::ManifestMismatch(_) => "ManifestMismatch",
            SlideError::Codec(_) => "CodecError",
            SlideError::Io(_) => "IoFailure",
        }
    }
}

/// Geometry of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub width: u32,
    pub height: u32,
    /// Downsample relative to the base level (level 0).
    pub downsample: f64,
}

/// Geometry of a multi-resolution slide. Level 0 is the base; levels are
/// ordered by ascending downsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidDescriptor {
    pub slide_id: String,
    pub width: u32,
    pub height: u32,
    pub levels: Vec<LevelInfo>,
    pub tile_size: u32,
    pub overlap: u32,
    pub base_magnification: Option<f64>,
    pub mpp: Option<f64>,
}

impl PyramidDescriptor {
    pub fn level(&self, level: usize) -> Result<&LevelInfo, SlideError> {
        self.levels.get(level).ok_or(SlideError::LevelOutOfRange(level))
    }

    /// Index of the level whose downsample is closest to `downsample`
    /// without exceeding it (level 0 when none is smaller).
    pub fn best_level_for_downsample(&self, downsample: f64) -> usize {
        let mut best = 0;
        for (i, l) in self.levels.iter().enumerate() {
            if l.downsample <= downsample * (1.0 + 1e-6) {
                best = i;
            }
        }
        best
    }
}
