use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;
use rayon::prelude::*;

use super::codec::{decode_image, StandardCodec, TileCodec};
use super::pyramid_dir::{tile_path, Manifest};
use super::source::{FileSource, ReadAt};
use super::tiff::{self, compression, description_value, TiledImage};
use super::{LevelInfo, PyramidDescriptor, SlideError};
use crate::geom::Rect;
use crate::pixel::PixelBuffer;

const TILE_CACHE_ENTRIES: usize = 1024;

enum Backend {
    Tiff {
        src: Box<dyn ReadAt>,
        levels: Vec<TiledImage>,
        codec: Arc<dyn TileCodec>,
    },
    Dir {
        root: PathBuf,
        manifest: Manifest,
    },
}

struct LevelGeometry {
    width: u32,
    height: u32,
    tile_width: u32,
    tile_height: u32,
}

impl LevelGeometry {
    fn grid(&self) -> (u32, u32) {
        (self.width.div_ceil(self.tile_width), self.height.div_ceil(self.tile_height))
    }
}

/// An opened slide. Immutable after opening; all reads take `&self` and
/// may run concurrently.
pub struct Slide {
    descriptor: PyramidDescriptor,
    channels: u8,
    geometry: Vec<LevelGeometry>,
    backend: Backend,
    cache: Mutex<LruCache<(usize, u32, u32), Arc<PixelBuffer>>>,
}

impl std::fmt::Debug for Slide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Slide").field("descriptor", &self.descriptor).finish()
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn new_cache() -> Mutex<LruCache<(usize, u32, u32), Arc<PixelBuffer>>> {
    Mutex::new(LruCache::new(NonZeroUsize::new(TILE_CACHE_ENTRIES).unwrap()))
}

impl Slide {
    /// Open a pyramid directory or a tiled TIFF file.
    pub fn open(path: &Path) -> Result<Slide, SlideError> {
        if path.is_dir() {
            Slide::open_pyramid_dir(path)
        } else {
            Slide::open_tiff(path)
        }
    }

    pub fn open_tiff(path: &Path) -> Result<Slide, SlideError> {
        let src = FileSource::open(path)?;
        Slide::from_tiff_source(Box::new(src), stem(path), Arc::new(StandardCodec))
    }

    /// Open a tiled TIFF over any byte source with a caller-chosen codec.
    pub fn from_tiff_source(
        src: Box<dyn ReadAt>,
        slide_id: String,
        codec: Arc<dyn TileCodec>,
    ) -> Result<Slide, SlideError> {
        let header = tiff::read_header(src.as_ref())?;
        let dirs = tiff::walk_ifd_chain(src.as_ref(), &header)?;
        let mut levels = Vec::new();
        for dir in dirs.iter().filter(|d| d.is_tiled()) {
            let img = TiledImage::from_directory(dir)?;
            if !img.is_reduced_mask {
                levels.push(img);
            }
        }
        if levels.is_empty() {
            return Err(SlideError::InvalidDirectory("no tiled image directories".into()));
        }
        levels.sort_by_key(|l| std::cmp::Reverse(l.width));
        levels.dedup_by(|a, b| a.width == b.width);
        let base = &levels[0];
        let channels = base.samples_per_pixel;
        if levels.iter().any(|l| l.samples_per_pixel != channels) {
            return Err(SlideError::InvalidDirectory("levels disagree on samples per pixel".into()));
        }
        for pair in levels.windows(2) {
            if pair[1].height >= pair[0].height {
                return Err(SlideError::InvalidDirectory("level dimensions must strictly decrease".into()));
            }
        }
        let description = levels.iter().find_map(|l| l.description.clone()).unwrap_or_default();
        let descriptor = PyramidDescriptor {
            slide_id,
            width: base.width,
            height: base.height,
            levels: levels
                .iter()
                .map(|l| LevelInfo {
                    width: l.width,
                    height: l.height,
                    downsample: (base.width as f64 / l.width as f64 + base.height as f64 / l.height as f64) / 2.0,
                })
                .collect(),
            tile_size: base.tile_width,
            overlap: 0,
            base_magnification: description_value(&description, "AppMag").filter(|&m| m > 0.0),
            mpp: description_value(&description, "MPP").filter(|&m| m > 0.0),
        };
        let geometry = levels
            .iter()
            .map(|l| LevelGeometry {
                width: l.width,
                height: l.height,
                tile_width: l.tile_width,
                tile_height: l.tile_height,
            })
            .collect();
        Ok(Slide {
            descriptor,
            channels,
            geometry,
            backend: Backend::Tiff { src, levels, codec },
            cache: new_cache(),
        })
    }

    /// Open an internal pyramid directory, validating the manifest
    /// against the stored tile grid.
    pub fn open_pyramid_dir(path: &Path) -> Result<Slide, SlideError> {
        let manifest = Manifest::read(path)?;
        manifest.check_tiles(path)?;
        Ok(Slide::from_manifest(path, manifest, stem(path)))
    }

    pub(crate) fn from_manifest(root: &Path, manifest: Manifest, slide_id: String) -> Slide {
        let levels: Vec<LevelInfo> = (0..manifest.levels)
            .map(|k| {
                let (w, h) = manifest.level_dims(k);
                LevelInfo {
                    width: w,
                    height: h,
                    downsample: (1u64 << k) as f64,
                }
            })
            .collect();
        let geometry = levels
            .iter()
            .map(|l| LevelGeometry {
                width: l.width,
                height: l.height,
                tile_width: manifest.tile_size,
                tile_height: manifest.tile_size,
            })
            .collect();
        Slide {
            descriptor: PyramidDescriptor {
                slide_id,
                width: manifest.width,
                height: manifest.height,
                levels,
                tile_size: manifest.tile_size,
                overlap: manifest.overlap,
                base_magnification: manifest.base_magnification,
                mpp: manifest.mpp,
            },
            channels: manifest.channels,
            geometry,
            backend: Backend::Dir {
                root: root.to_path_buf(),
                manifest,
            },
            cache: new_cache(),
        }
    }

    pub fn descriptor(&self) -> &PyramidDescriptor {
        &self.descriptor
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn level_count(&self) -> usize {
        self.geometry.len()
    }

    /// `(cols, rows)` of the stored tile grid at `level`.
    pub fn tile_grid(&self, level: usize) -> Result<(u32, u32), SlideError> {
        Ok(self.level_geometry(level)?.grid())
    }

    /// Stored tile size `(width, height)` at `level`.
    pub fn tile_dims(&self, level: usize) -> Result<(u32, u32), SlideError> {
        let g = self.level_geometry(level)?;
        Ok((g.tile_width, g.tile_height))
    }

    fn level_geometry(&self, level: usize) -> Result<&LevelGeometry, SlideError> {
        self.geometry.get(level).ok_or(SlideError::LevelOutOfRange(level))
    }

    /// Decode one stored tile. TIFF edge tiles come back padded to the
    /// full tile size; internal-format edge tiles at their natural size.
    pub fn read_tile_raw(&self, level: usize, col: u32, row: u32) -> Result<PixelBuffer, SlideError> {
        Ok(self.tile(level, col, row)?.as_ref().clone())
    }

    fn tile(&self, level: usize, col: u32, row: u32) -> Result<Arc<PixelBuffer>, SlideError> {
        let (cols, rows) = self.level_geometry(level)?.grid();
        if col >= cols || row >= rows {
            return Err(SlideError::TileOutOfRange { level, col, row });
        }
        let key = (level, col, row);
        if let Some(t) = self.cache.lock().get(&key) {
            return Ok(t.clone());
        }
        let tile = Arc::new(self.decode_tile(level, col, row, cols)?);
        self.cache.lock().put(key, tile.clone());
        Ok(tile)
    }

    fn decode_tile(&self, level: usize, col: u32, row: u32, cols: u32) -> Result<PixelBuffer, SlideError> {
        match &self.backend {
            Backend::Tiff { src, levels, codec } => {
                let img = &levels[level];
                let idx = row as usize * cols as usize + col as usize;
                let (offset, count) = (img.tile_offsets[idx], img.tile_byte_counts[idx]);
                let (tw, th, spp) = (img.tile_width, img.tile_height, img.samples_per_pixel);
                if count == 0 {
                    return Ok(PixelBuffer::filled(tw, th, spp, 255));
                }
                let end = offset.checked_add(count).filter(|&e| e <= src.len());
                if end.is_none() {
                    return Err(SlideError::TruncatedFile { offset, needed: count });
                }
                match img.compression {
                    compression::NONE => {
                        let expected = tw as u64 * th as u64 * spp as u64;
                        if count < expected {
                            return Err(SlideError::TruncatedFile {
                                offset,
                                needed: expected,
                            });
                        }
                        let mut data = vec![0u8; expected as usize];
                        src.read_exact_at(offset, &mut data)?;
                        PixelBuffer::from_raw(tw, th, spp, data).map_err(|e| SlideError::Codec(e.to_string()))
                    }
                    scheme => {
                        let mut data = vec![0u8; count as usize];
                        src.read_exact_at(offset, &mut data)?;
                        let tile = codec.decode(scheme, &data, img.jpeg_tables.as_deref(), tw, th, spp)?;
                        if (tile.width(), tile.height(), tile.channels()) != (tw, th, spp) {
                            return Err(SlideError::Codec("codec returned wrong tile geometry".into()));
                        }
                        Ok(tile)
                    }
                }
            }
            Backend::Dir { root, manifest } => {
                let path = tile_path(root, level as u32, col, row, manifest.format);
                let bytes = std::fs::read(&path).map_err(|e| {
                    if e.kind() == std::io::ErrorKind::NotFound {
                        SlideError::ManifestMismatch(format!("missing tile {}", path.display()))
                    } else {
                        e.into()
                    }
                })?;
                let tile = decode_image(&bytes)?;
                let tile = if tile.channels() != self.channels {
                    tile.to_channels(self.channels)
                } else {
                    tile
                };
                Ok(tile)
            }
        }
    }

    /// Read a `w × h` region with top-left `(x, y)` in `level` pixel
    /// coordinates. Parts outside the level are white.
    pub fn read_region(&self, level: usize, x: i64, y: i64, w: u32, h: u32) -> Result<PixelBuffer, SlideError> {
        let g = self.level_geometry(level)?;
        if w == 0 || h == 0 {
            return Err(SlideError::ZeroAreaRect);
        }
        let rect = Rect::new(x, y, w as i64, h as i64);
        let bounds = Rect::new(0, 0, g.width as i64, g.height as i64);
        let inter = rect.intersect(&bounds).ok_or(SlideError::RegionOutOfBounds)?;
        let (tw, th) = (g.tile_width as i64, g.tile_height as i64);
        let mut coords = Vec::new();
        for row in inter.y / th..=(inter.bottom() - 1) / th {
            for col in inter.x / tw..=(inter.right() - 1) / tw {
                coords.push((col as u32, row as u32));
            }
        }
        let tiles: Vec<Arc<PixelBuffer>> = if coords.len() > 2 {
            coords
                .par_iter()
                .map(|&(c, r)| self.tile(level, c, r))
                .collect::<Result<_, _>>()?
        } else {
            coords.iter().map(|&(c, r)| self.tile(level, c, r)).collect::<Result<_, _>>()?
        };

        let mut out = PixelBuffer::filled(w, h, self.channels, 255);
        for (&(col, row), tile) in coords.iter().zip(&tiles) {
            let tile_rect = Rect::new(col as i64 * tw, row as i64 * th, tw, th);
            let Some(part) = tile_rect.intersect(&inter) else { continue };
            let local = Rect::new(part.x - tile_rect.x, part.y - tile_rect.y, part.w, part.h);
            if local.right() > tile.width() as i64 || local.bottom() > tile.height() as i64 {
                return Err(SlideError::ManifestMismatch(format!(
                    "tile ({col}, {row}) of level {level} is {}x{}, smaller than its grid cell",
                    tile.width(),
                    tile.height()
                )));
            }
            out.blit(tile, local, (part.x - rect.x) as u32, (part.y - rect.y) as u32);
        }
        Ok(out)
    }

    /// Materialise a whole level.
    pub fn read_level(&self, level: usize) -> Result<PixelBuffer, SlideError> {
        let g = self.level_geometry(level)?;
        self.read_region(level, 0, 0, g.width, g.height)
    }
}
