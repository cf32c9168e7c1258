use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use super::downsample::downsample_2x;
use super::TilerError;
use crate::geom::Rect;
use crate::pixel::PixelBuffer;
use crate::slide_io::{Manifest, PyramidDescriptor, Slide, TileFormat};

/// Storage-side tiling. Stored tiles never overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageLayout {
    pub tile_size: u32,
    pub format: TileFormat,
}

impl Default for StorageLayout {
    fn default() -> Self {
        StorageLayout {
            tile_size: 256,
            format: TileFormat::Png,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PyramidMeta {
    pub slide_id: Option<String>,
    pub base_magnification: Option<f64>,
    pub mpp: Option<f64>,
}

static BUILD_SEQ: AtomicU64 = AtomicU64::new(0);

fn staging_dir(out: &Path) -> Result<PathBuf, TilerError> {
    let name = out
        .file_name()
        .ok_or_else(|| TilerError::InvalidLayout(format!("output path {} has no file name", out.display())))?
        .to_string_lossy()
        .into_owned();
    let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let seq = BUILD_SEQ.fetch_add(1, Ordering::Relaxed);
    Ok(parent.join(format!(".{name}.building-{}-{seq}", std::process::id())))
}

/// Build the internal pyramid for an in-memory base image.
pub fn build_pyramid(
    base: &PixelBuffer,
    layout: &StorageLayout,
    out: &Path,
    meta: &PyramidMeta,
) -> Result<PyramidDescriptor, TilerError> {
    if base.channels() == 4 {
        return Err(TilerError::InvalidLayout("RGBA bases are not stored".into()));
    }
    build_with(base.width(), base.height(), base.channels(), layout, out, meta, &|r: Rect| {
        Ok(base.crop(r, 255))
    })
}

/// Build the internal pyramid from level 0 of an opened slide, one tile
/// at a time, so the base never has to fit in memory.
pub fn build_pyramid_from_slide(
    slide: &Slide,
    layout: &StorageLayout,
    out: &Path,
    meta: &PyramidMeta,
) -> Result<PyramidDescriptor, TilerError> {
    let d = slide.descriptor();
    let meta = PyramidMeta {
        slide_id: meta.slide_id.clone(),
        base_magnification: meta.base_magnification.or(d.base_magnification),
        mpp: meta.mpp.or(d.mpp),
    };
    build_with(d.width, d.height, slide.channels(), layout, out, &meta, &|r: Rect| {
        Ok(slide.read_region(0, r.x, r.y, r.w as u32, r.h as u32)?)
    })
}

type FetchFn<'a> = dyn Fn(Rect) -> Result<PixelBuffer, TilerError> + Sync + 'a;

fn build_with(
    width: u32,
    height: u32,
    channels: u8,
    layout: &StorageLayout,
    out: &Path,
    meta: &PyramidMeta,
    fetch_base: &FetchFn<'_>,
) -> Result<PyramidDescriptor, TilerError> {
    if width == 0 || height == 0 {
        return Err(TilerError::InvalidLayout("base image is empty".into()));
    }
    if layout.tile_size == 0 {
        return Err(TilerError::InvalidLayout("tile size must be at least 1".into()));
    }
    let manifest = Manifest {
        width,
        height,
        tile_size: layout.tile_size,
        overlap: 0,
        format: layout.format,
        levels: super::dz_level_count(width, height),
        channels,
        base_magnification: meta.base_magnification,
        mpp: meta.mpp,
    };
    let staging = staging_dir(out)?;
    let result = write_levels(&staging, &manifest, fetch_base);
    if let Err(e) = result {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if out.exists() {
        fs::remove_dir_all(out)?;
    }
    fs::rename(&staging, out)?;
    let slide_id = meta.slide_id.clone().unwrap_or_else(|| {
        out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    });
    Ok(Slide::from_manifest(out, manifest, slide_id).descriptor().clone())
}

fn write_tile(root: &Path, manifest: &Manifest, k: u32, col: u32, row: u32, tile: &PixelBuffer) -> Result<(), TilerError> {
    let bytes = crate::slide_io::encode_tile(tile, manifest.format)?;
    fs::write(crate::slide_io::tile_path(root, k, col, row, manifest.format), bytes)?;
    Ok(())
}

fn write_levels(root: &Path, manifest: &Manifest, fetch_base: &FetchFn<'_>) -> Result<(), TilerError> {
    fs::create_dir_all(root.join("levels"))?;
    manifest.write(root)?;
    let ts = manifest.tile_size;

    fs::create_dir_all(root.join("levels").join("0"))?;
    let (cols, rows) = manifest.grid(0);
    let (w0, h0) = manifest.level_dims(0);
    (0..rows)
        .into_par_iter()
        .flat_map_iter(|r| (0..cols).map(move |c| (c, r)))
        .try_for_each(|(c, r)| {
            let x = (c * ts) as i64;
            let y = (r * ts) as i64;
            let rect = Rect::new(x, y, (ts as i64).min(w0 as i64 - x), (ts as i64).min(h0 as i64 - y));
            let mut tile = fetch_base(rect)?;
            if tile.channels() != manifest.channels {
                tile = tile.to_channels(manifest.channels);
            }
            write_tile(root, manifest, 0, c, r, &tile)
        })?;

    // Each level is read back from the one just written. A level tile
    // covers an even-aligned 2T×2T block of its parent, so halving the
    // block equals cropping the halved parent.
    let reader = Slide::from_manifest(root, manifest.clone(), String::new());
    for k in 1..manifest.levels {
        fs::create_dir_all(root.join("levels").join(k.to_string()))?;
        let (pw, ph) = manifest.level_dims(k - 1);
        let (cols, rows) = manifest.grid(k);
        (0..rows)
            .into_par_iter()
            .flat_map_iter(|r| (0..cols).map(move |c| (c, r)))
            .try_for_each(|(c, r)| {
                let x = 2 * (c as i64) * ts as i64;
                let y = 2 * (r as i64) * ts as i64;
                let w = (2 * ts as i64).min(pw as i64 - x);
                let h = (2 * ts as i64).min(ph as i64 - y);
                let block = reader.read_region((k - 1) as usize, x, y, w as u32, h as u32)?;
                write_tile(root, manifest, k, c, r, &downsample_2x(&block))
            })?;
    }
    Ok(())
}
