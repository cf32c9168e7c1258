use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::pixel::PixelBuffer;
use crate::slide_io::Slide;

/// Per-cell class ids over a slide level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLabels {
    /// Cell edge in pixels of `level`.
    pub grid_size: u32,
    pub level: usize,
    /// Downsample of `level` relative to the base.
    pub downsample: f64,
    /// Dims of `level`.
    pub width: u32,
    pub height: u32,
    pub cols: u32,
    pub rows: u32,
    /// Row-major, `cols * rows` entries; 0 is background.
    pub labels: Vec<u32>,
    pub palette: Vec<[u8; 4]>,
}

impl GridLabels {
    pub fn label(&self, col: u32, row: u32) -> u32 {
        self.labels[(row * self.cols + col) as usize]
    }

    /// `(class, cell count)` for every class present, ascending.
    pub fn class_counts(&self) -> Vec<(u32, u64)> {
        let mut counts = std::collections::BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0u64) += 1;
        }
        counts.into_iter().collect()
    }

    /// `(class, area in level pixels)` for every class present; edge
    /// cells count only their in-slide part.
    pub fn class_areas(&self) -> Vec<(u32, u64)> {
        let mut areas = std::collections::BTreeMap::new();
        for r in 0..self.rows {
            let h = self.grid_size.min(self.height - r * self.grid_size) as u64;
            for c in 0..self.cols {
                let w = self.grid_size.min(self.width - c * self.grid_size) as u64;
                *areas.entry(self.label(c, r)).or_insert(0u64) += w * h;
            }
        }
        areas.into_iter().collect()
    }

    /// Header `width height grid_size level downsample`, then one row of
    /// ids per line. The palette is not included.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {} {}\n",
            self.width, self.height, self.grid_size, self.level, self.downsample
        );
        for r in 0..self.rows {
            let row: Vec<String> = (0..self.cols).map(|c| self.label(c, r).to_string()).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, palette: Vec<[u8; 4]>) -> Result<GridLabels, String> {
        let mut lines = text.lines();
        let head: Vec<&str> = lines.next().ok_or("empty grid")?.split_whitespace().collect();
        let [width, height, grid_size, level, downsample] = head[..] else {
            return Err("grid header needs 5 values".into());
        };
        let num = |v: &str| v.parse::<u32>().map_err(|e| format!("bad grid header `{v}`: {e}"));
        let (width, height, grid_size) = (num(width)?, num(height)?, num(grid_size)?);
        if grid_size == 0 {
            return Err("grid_size is zero".into());
        }
        let (cols, rows) = (width.div_ceil(grid_size), height.div_ceil(grid_size));
        let level = level.parse::<usize>().map_err(|e| e.to_string())?;
        let downsample = downsample.parse::<f64>().map_err(|e| e.to_string())?;
        let labels: Vec<u32> = lines
            .flat_map(str::split_whitespace)
            .map(|v| v.parse::<u32>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()?;
        if labels.len() != cols as usize * rows as usize {
            return Err(format!("grid holds {} labels, expected {}", labels.len(), cols * rows));
        }
        Ok(GridLabels {
            grid_size,
            level,
            downsample,
            width,
            height,
            cols,
            rows,
            labels,
            palette,
        })
    }
}

/// Maps one cell image to a class id; 0 means background.
pub trait CellClassifier: Send + Sync {
    fn classify(&self, cell: &PixelBuffer) -> u32;
}

/// Nearest class centroid by mean RGB; class 0 is the white background.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanColorClassifier {
    /// Centroid of class `i + 1`.
    pub centroids: Vec<[f64; 3]>,
    pub background: [f64; 3],
}

impl MeanColorClassifier {
    pub fn new(centroids: Vec<[f64; 3]>) -> Self {
        MeanColorClassifier {
            centroids,
            background: [255.0, 255.0, 255.0],
        }
    }

    /// Parse `r,g,b;r,g,b;...`.
    pub fn parse_centroids(text: &str) -> Result<Vec<[f64; 3]>, AnalysisError> {
        let bad = || AnalysisError::BadParams(format!("centroids `{text}` are not `r,g,b;r,g,b`"));
        text.split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|c| {
                let v: Vec<f64> = c
                    .split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?;
                <[f64; 3]>::try_from(v).map_err(|_| bad())
            })
            .collect()
    }
}

impl Default for MeanColorClassifier {
    fn default() -> Self {
        // Haematoxylin-dominant and eosin-dominant tissue.
        MeanColorClassifier::new(vec![[120.0, 70.0, 160.0], [230.0, 130.0, 170.0]])
    }
}

impl CellClassifier for MeanColorClassifier {
    fn classify(&self, cell: &PixelBuffer) -> u32 {
        let rgb = if cell.channels() == 3 { cell.clone() } else { cell.to_channels(3) };
        let n = (rgb.width() as f64 * rgb.height() as f64).max(1.0);
        let mut sum = [0f64; 3];
        for p in rgb.data().chunks_exact(3) {
            for k in 0..3 {
                sum[k] += p[k] as f64;
            }
        }
        let mean = sum.map(|s| s / n);
        let dist = |c: &[f64; 3]| (0..3).map(|k| (mean[k] - c[k]).powi(2)).sum::<f64>();
        let mut best = (0u32, dist(&self.background));
        for (i, c) in self.centroids.iter().enumerate() {
            let d = dist(c);
            if d < best.1 {
                best = (i as u32 + 1, d);
            }
        }
        best.0
    }
}

/// Label every `grid_size` cell of `level`.
pub fn classify_regions(
    slide: &Slide,
    level: usize,
    grid_size: u32,
    classifier: &dyn CellClassifier,
    palette: Vec<[u8; 4]>,
) -> Result<GridLabels, AnalysisError> {
    if grid_size == 0 {
        return Err(AnalysisError::BadParams("grid_size must be at least 1".into()));
    }
    let info = *slide.descriptor().level(level)?;
    let cols = info.width.div_ceil(grid_size);
    let rows = info.height.div_ceil(grid_size);
    let mut labels = Vec::with_capacity((cols * rows) as usize);
    for r in 0..rows {
        for c in 0..cols {
            let x = c * grid_size;
            let y = r * grid_size;
            let w = grid_size.min(info.width - x);
            let h = grid_size.min(info.height - y);
            let cell = slide.read_region(level, x as i64, y as i64, w, h)?;
            labels.push(classifier.classify(&cell));
        }
    }
    Ok(GridLabels {
        grid_size,
        level,
        downsample: info.downsample,
        width: info.width,
        height: info.height,
        cols,
        rows,
        labels,
        palette,
    })
}
