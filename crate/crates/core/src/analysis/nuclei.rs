use serde::{Deserialize, Serialize};

use super::components::connected_components;
use super::otsu::{histogram, otsu_threshold};
use super::AnalysisError;
use crate::geom::Point;
use crate::pixel::{luminance, PixelBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum ThresholdMode {
    Otsu,
    /// Fixed cut on inverted luminance (darkness).
    Fixed(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NucleusParams {
    pub threshold_mode: ThresholdMode,
    pub min_area: u64,
    pub max_area: u64,
}

impl Default for NucleusParams {
    fn default() -> Self {
        NucleusParams {
            threshold_mode: ThresholdMode::Otsu,
            min_area: 20,
            max_area: 2000,
        }
    }
}

fn darkness(img: &PixelBuffer) -> Vec<u8> {
    let ch = img.channels() as usize;
    img.data()
        .chunks_exact(ch)
        .map(|p| {
            let l = if ch >= 3 { luminance(p[0], p[1], p[2]) } else { p[0] };
            255 - l
        })
        .collect()
}

/// Centroids of dark blobs, in region pixel coordinates.
pub fn detect_nuclei(img: &PixelBuffer, params: &NucleusParams) -> Result<Vec<Point>, AnalysisError> {
    if params.min_area > params.max_area {
        return Err(AnalysisError::BadParams(format!(
            "min_area {} exceeds max_area {}",
            params.min_area, params.max_area
        )));
    }
    let dark = darkness(img);
    let t = match params.threshold_mode {
        ThresholdMode::Fixed(t) => t,
        ThresholdMode::Otsu => {
            let h = histogram(dark.iter().copied());
            // A single-valued image has nothing to separate.
            if h.iter().filter(|&&c| c > 0).count() < 2 {
                return Ok(Vec::new());
            }
            otsu_threshold(&h)
        }
    };
    let bits: Vec<bool> = dark.iter().map(|&d| d > t).collect();
    let comps = connected_components(img.width(), img.height(), &bits);
    Ok(comps
        .regions
        .into_iter()
        .filter(|c| (params.min_area..=params.max_area).contains(&c.area))
        .map(|c| c.centroid)
        .collect())
}
