use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{dz_level_count, TilerError};
use crate::slide_io::PyramidDescriptor;

/// Named objective-power stops for a slide, e.g. `low = 20`, `high = 40`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnificationMap {
    pub base_magnification: f64,
    pub named_stops: BTreeMap<String, f64>,
}

impl MagnificationMap {
    pub fn default_stops() -> BTreeMap<String, f64> {
        BTreeMap::from([("low".to_owned(), 20.0), ("high".to_owned(), 40.0)])
    }

    pub fn new(base_magnification: f64) -> MagnificationMap {
        MagnificationMap {
            base_magnification,
            named_stops: Self::default_stops(),
        }
    }

    pub fn with_stops(base_magnification: f64, named_stops: BTreeMap<String, f64>) -> MagnificationMap {
        MagnificationMap {
            base_magnification,
            named_stops,
        }
    }

    pub fn for_slide(d: &PyramidDescriptor, stops: &BTreeMap<String, f64>) -> Result<MagnificationMap, TilerError> {
        let base = d.base_magnification.ok_or(TilerError::NoMagnification)?;
        Ok(MagnificationMap::with_stops(base, stops.clone()))
    }
}

/// `base / stop`.
pub fn magnification_to_downsample(map: &MagnificationMap, stop_name: &str) -> Result<f64, TilerError> {
    let stop = *map
        .named_stops
        .get(stop_name)
        .ok_or_else(|| TilerError::UnknownStop(stop_name.to_owned()))?;
    if !(stop > 0.0) {
        return Err(TilerError::InvalidLayout(format!("stop `{stop_name}` must be positive")));
    }
    if stop > map.base_magnification {
        return Err(TilerError::StopExceedsBase {
            stop,
            base: map.base_magnification,
        });
    }
    Ok(map.base_magnification / stop)
}

/// Where a viewer should land for a given downsample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomTarget {
    pub downsample: f64,
    /// Pyramid level nearest to `downsample` in log scale.
    pub level: usize,
    /// Deep Zoom level with the same nearest-power-of-two scale.
    pub dz_level: u32,
    /// Extra client-side scale on top of `level`; 1 for power-of-two stops.
    pub client_zoom: f64,
}

pub fn zoom_target(d: &PyramidDescriptor, downsample: f64) -> ZoomTarget {
    let log = downsample.max(1.0).log2();
    let level = d
        .levels
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            let da = (a.downsample.log2() - log).abs();
            let db = (b.downsample.log2() - log).abs();
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .unwrap_or(0);
    let max_level = dz_level_count(d.width, d.height) - 1;
    let steps = (log.round() as u32).min(max_level);
    let level_ds = d.levels.get(level).map_or(1.0, |l| l.downsample);
    ZoomTarget {
        downsample,
        level,
        dz_level: max_level - steps,
        client_zoom: level_ds / downsample,
    }
}
