//! Internal pyramid layout:
//!
//! ```text
//! <slide>/manifest                    key = value text
//! <slide>/levels/<k>/<col>_<row>.<fmt>
//! ```
//!
//! Level `k` is the base halved `k` times (dims rounded up). Tiles are
//! stored at their natural size, so edge tiles may be smaller than
//! `tile_size`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SlideError;

pub const MANIFEST_FILE: &str = "manifest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileFormat {
    Png,
    #[serde(alias = "jpeg")]
    Jpg,
}

impl TileFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            TileFormat::Png => "png",
            TileFormat::Jpg => "jpg",
        }
    }

    pub fn mime(&self) -> &'static str {
        match self {
            TileFormat::Png => "image/png",
            TileFormat::Jpg => "image/jpeg",
        }
    }
}

impl fmt::Display for TileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for TileFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Ok(TileFormat::Png),
            "jpg" | "jpeg" => Ok(TileFormat::Jpg),
            other => Err(format!("unsupported tile format `{other}`")),
        }
    }
}

fn default_channels() -> u8 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub overlap: u32,
    pub format: TileFormat,
    pub levels: u32,
    #[serde(default = "default_channels")]
    pub channels: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_magnification: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpp: Option<f64>,
}

/// Dims of level `k` of a halving pyramid.
pub(crate) fn halved_dims(width: u32, height: u32, k: u32) -> (u32, u32) {
    let scale = 1u64 << k.min(63);
    (
        (width as u64).div_ceil(scale) as u32,
        (height as u64).div_ceil(scale) as u32,
    )
}

/// Number of halving levels from `(width, height)` down to 1×1.
pub(crate) fn halving_level_count(width: u32, height: u32) -> u32 {
    let m = width.max(height).max(1);
    if m == 1 {
        1
    } else {
        33 - (m - 1).leading_zeros()
    }
}

impl Manifest {
    pub fn level_dims(&self, k: u32) -> (u32, u32) {
        halved_dims(self.width, self.height, k)
    }

    pub fn grid(&self, k: u32) -> (u32, u32) {
        let (w, h) = self.level_dims(k);
        (w.div_ceil(self.tile_size), h.div_ceil(self.tile_size))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("manifest serialises")
    }

    pub fn read(dir: &Path) -> Result<Manifest, SlideError> {
        let path = dir.join(MANIFEST_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(SlideError::MissingManifest(dir.to_path_buf()))
            }
            Err(e) => return Err(e.into()),
        };
        let m: Manifest =
            toml::from_str(&text).map_err(|e| SlideError::ManifestMismatch(format!("unreadable manifest: {e}")))?;
        m.check_fields()?;
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<(), SlideError> {
        fs::write(dir.join(MANIFEST_FILE), self.to_text())?;
        Ok(())
    }

    fn check_fields(&self) -> Result<(), SlideError> {
        let bad = |m: String| Err(SlideError::ManifestMismatch(m));
        if self.width == 0 || self.height == 0 || self.tile_size == 0 {
            return bad("zero width, height or tile size".into());
        }
        if self.levels == 0 || self.levels > halving_level_count(self.width, self.height) {
            return bad(format!("{} levels for a {}x{} base", self.levels, self.width, self.height));
        }
        if !matches!(self.channels, 1 | 3) {
            return bad(format!("{} channels", self.channels));
        }
        if let Some(m) = self.base_magnification {
            if !(m > 0.0) {
                return bad("base_magnification must be positive".into());
            }
        }
        Ok(())
    }

    /// Check the stored tile grid of every level agrees with the
    /// declared geometry: the last tile exists and nothing lies past it.
    pub fn check_tiles(&self, dir: &Path) -> Result<(), SlideError> {
        for k in 0..self.levels {
            let level_dir = dir.join("levels").join(k.to_string());
            if !level_dir.is_dir() {
                return Err(SlideError::ManifestMismatch(format!("level directory {k} missing")));
            }
            let (cols, rows) = self.grid(k);
            let exists = |c: u32, r: u32| tile_path(dir, k, c, r, self.format).is_file();
            if !exists(cols - 1, rows - 1) {
                return Err(SlideError::ManifestMismatch(format!(
                    "level {k}: expected a {cols}x{rows} tile grid, last tile missing"
                )));
            }
            if exists(cols, 0) || exists(0, rows) {
                return Err(SlideError::ManifestMismatch(format!(
                    "level {k}: tiles stored beyond the declared {cols}x{rows} grid"
                )));
            }
        }
        Ok(())
    }
}

pub fn tile_path(root: &Path, level: u32, col: u32, row: u32, format: TileFormat) -> PathBuf {
    root.join("levels")
        .join(level.to_string())
        .join(format!("{col}_{row}.{}", format.extension()))
}
