use serde::{Deserialize, Serialize};

use super::TilerError;
use crate::geom::Rect;
use crate::slide_io::TileFormat;

/// Wire-side tiling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeepZoomLayout {
    pub tile_size: u32,
    pub overlap: u32,
    pub format: TileFormat,
}

impl Default for DeepZoomLayout {
    fn default() -> Self {
        DeepZoomLayout {
            tile_size: 254,
            overlap: 1,
            format: TileFormat::Jpg,
        }
    }
}

impl DeepZoomLayout {
    pub fn validate(&self) -> Result<(), TilerError> {
        if self.tile_size == 0 {
            return Err(TilerError::InvalidLayout("tile_size must be at least 1".into()));
        }
        if self.overlap > 1 {
            return Err(TilerError::InvalidLayout("overlap must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// `ceil(log2(max(w, h))) + 1`.
pub fn dz_level_count(width: u32, height: u32) -> u32 {
    let m = width.max(height).max(1);
    if m == 1 {
        1
    } else {
        33 - (m - 1).leading_zeros()
    }
}

pub fn dz_level_dims(width: u32, height: u32, dz_level: u32) -> Result<(u32, u32), TilerError> {
    let max_level = dz_level_count(width, height) - 1;
    if dz_level > max_level {
        return Err(TilerError::LevelOutOfRange {
            level: dz_level,
            max_level,
        });
    }
    let scale = 1u64 << (max_level - dz_level);
    Ok((
        (width as u64).div_ceil(scale) as u32,
        (height as u64).div_ceil(scale) as u32,
    ))
}

pub fn tile_grid(level_dims: (u32, u32), tile_size: u32) -> (u32, u32) {
    (level_dims.0.div_ceil(tile_size), level_dims.1.div_ceil(tile_size))
}

/// Level-space rectangle covered by a Deep Zoom tile, overlaps included.
pub fn tile_rect(
    dz_level: u32,
    col: u32,
    row: u32,
    layout: &DeepZoomLayout,
    level_dims: (u32, u32),
) -> Result<Rect, TilerError> {
    layout.validate()?;
    let (cols, rows) = tile_grid(level_dims, layout.tile_size);
    if col >= cols || row >= rows {
        return Err(TilerError::TileOutOfRange {
            level: dz_level,
            col,
            row,
            cols,
            rows,
        });
    }
    let axis = |index: u32, count: u32, extent: u32| -> (i64, i64) {
        let ts = layout.tile_size as i64;
        let ov = layout.overlap as i64;
        let start = index as i64 * ts;
        let before = if index > 0 { ov } else { 0 };
        let after = if index + 1 < count { ov } else { 0 };
        let body = ts.min(extent as i64 - start);
        (start - before, body + before + after)
    };
    let (x, w) = axis(col, cols, level_dims.0);
    let (y, h) = axis(row, rows, level_dims.1);
    Ok(Rect::new(x, y, w, h))
}

/// The `.dzi` descriptor document.
pub fn dzi_document(width: u32, height: u32, layout: &DeepZoomLayout) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?><Image xmlns=\"http://schemas.microsoft.com/deepzoom/2008\" Format=\"{}\" Overlap=\"{}\" TileSize=\"{}\"><Size Width=\"{}\" Height=\"{}\"/></Image>",
        layout.format.extension(),
        layout.overlap,
        layout.tile_size,
        width,
        height
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_counts() {
        assert_eq!(dz_level_count(1, 1), 1);
        assert_eq!(dz_level_count(256, 256), 9);
        assert_eq!(dz_level_count(100_000, 80_000), 18);
        assert_eq!(dz_level_count(257, 1), 10);
    }

    #[test]
    fn level_dims() {
        let top = dz_level_count(1000, 600) - 1;
        assert_eq!(dz_level_dims(1000, 600, top).unwrap(), (1000, 600));
        assert_eq!(dz_level_dims(1000, 600, top - 1).unwrap(), (500, 300));
        assert_eq!(dz_level_dims(1000, 600, 0).unwrap(), (1, 1));
        assert!(matches!(
            dz_level_dims(1000, 600, top + 1),
            Err(TilerError::LevelOutOfRange { .. })
        ));
    }

    #[test]
    fn tile_rects_with_overlap() {
        let layout = DeepZoomLayout::default();
        let dims = (1000, 600);
        assert_eq!(tile_rect(10, 0, 0, &layout, dims).unwrap(), Rect::new(0, 0, 255, 255));
        assert_eq!(tile_rect(10, 1, 0, &layout, dims).unwrap(), Rect::new(253, 0, 256, 255));
        // last column: 1000 - 3*254 = 238 px of body plus the left overlap
        assert_eq!(tile_rect(10, 3, 0, &layout, dims).unwrap(), Rect::new(761, 0, 239, 255));
        assert!(matches!(
            tile_rect(10, 4, 0, &layout, dims),
            Err(TilerError::TileOutOfRange { cols: 4, .. })
        ));
    }

    #[test]
    fn dzi_template() {
        let doc = dzi_document(1000, 600, &DeepZoomLayout::default());
        assert_eq!(
            doc,
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?><Image xmlns=\"http://schemas.microsoft.com/deepzoom/2008\" Format=\"jpg\" Overlap=\"1\" TileSize=\"254\"><Size Width=\"1000\" Height=\"600\"/></Image>"
        );
    }
}
