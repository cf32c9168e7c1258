use std::path::PathBuf;

use crate::annotation::GapPolicy;
use crate::slide_io::TileFormat;
use crate::tiler::{DeepZoomLayout, StorageLayout, TilerError};

/// Deployment settings shared by the server and the command line.
#[derive(Debug, Clone)]
pub struct Config {
    pub data_dir: PathBuf,
    pub port: u16,
    /// Deep Zoom tile edge served to viewers, without overlap.
    pub tile_size: u32,
    pub tile_overlap: u32,
    pub tile_format: TileFormat,
    /// Tiling of the internal pyramid written at ingest.
    pub storage: StorageLayout,
    pub gap: GapPolicy,
    pub workers: usize,
    /// Idle time after which an unfinished boundary stroke is closed.
    /// Zero or less disables auto-finish.
    pub stroke_auto_finish_ms: i64,
    pub thumbnail_max: u32,
    /// Encoded tiles kept in memory.
    pub tile_cache: usize,
    /// Opened slides kept in memory.
    pub slide_cache: usize,
    /// Author of annotations created from analysis results.
    pub machine_user: String,
    pub log_level: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: PathBuf::from("pimip-data"),
            port: 8080,
            tile_size: 254,
            tile_overlap: 1,
            tile_format: TileFormat::Jpg,
            storage: StorageLayout::default(),
            gap: GapPolicy::default(),
            workers: 2,
            stroke_auto_finish_ms: 3000,
            thumbnail_max: 256,
            tile_cache: 2048,
            slide_cache: 32,
            machine_user: "analysis".to_owned(),
            log_level: "info".to_owned(),
        }
    }
}

impl Config {
    pub fn with_data_dir(data_dir: impl Into<PathBuf>) -> Config {
        Config {
            data_dir: data_dir.into(),
            ..Config::default()
        }
    }

    pub fn deep_zoom(&self) -> DeepZoomLayout {
        DeepZoomLayout {
            tile_size: self.tile_size,
            overlap: self.tile_overlap,
            format: self.tile_format,
        }
    }

    pub fn validate(&self) -> Result<(), TilerError> {
        self.deep_zoom().validate()?;
        if self.storage.tile_size == 0 {
            return Err(TilerError::InvalidLayout("storage tile size must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(TilerError::InvalidLayout("at least one worker is required".into()));
        }
        Ok(())
    }
}
