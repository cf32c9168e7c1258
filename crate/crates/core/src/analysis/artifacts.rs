use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::classify::GridLabels;
use super::registry::{AnalysisOutput, OutputKind, Params};
use super::AnalysisError;
use crate::annotation::LabelMask;
use crate::geom::Point;

pub const RESULT_META_FILE: &str = "meta.json";
const MASK_FILE: &str = "mask.rle";
const POINTS_FILE: &str = "points.txt";
const GRID_FILE: &str = "grid.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub task_id: String,
    pub slide_id: String,
    pub analyzer: String,
    pub params: Params,
    pub submitted_at: i64,
    pub finished_at: i64,
    pub output_kind: OutputKind,
    pub palette: Vec<[u8; 4]>,
    pub summary: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultArtifact {
    pub meta: ResultMeta,
    pub output: AnalysisOutput,
}

fn summary(output: &AnalysisOutput) -> Value {
    match output {
        AnalysisOutput::Mask(m) => json!({ "area": m.area(), "bounds": m.bounds }),
        AnalysisOutput::Points(p) => json!({ "count": p.len() }),
        AnalysisOutput::Grid(g) => {
            let counts: Vec<Value> = g
                .class_counts()
                .into_iter()
                .zip(g.class_areas())
                .map(|((class, cells), (_, area))| {
                    json!({
                        "class": class,
                        "cells": cells,
                        "area_level_px": area,
                        "area_base_px": area as f64 * g.downsample * g.downsample,
                    })
                })
                .collect();
            json!({ "cols": g.cols, "rows": g.rows, "classes": counts })
        }
    }
}

fn points_text(points: &[Point]) -> String {
    let mut s = points
        .iter()
        .flat_map(|p| [p.x.to_string(), p.y.to_string()])
        .collect::<Vec<_>>()
        .join(" ");
    s.push('\n');
    s
}

/// Write the artifact set into `dir`, which must not exist yet. Files are
/// staged in a sibling directory and renamed into place.
#[allow(clippy::too_many_arguments)]
pub fn write_artifacts(
    dir: &Path,
    task_id: &str,
    slide_id: &str,
    analyzer: &str,
    params: &Params,
    submitted_at: i64,
    finished_at: i64,
    output: &AnalysisOutput,
) -> Result<ResultMeta, AnalysisError> {
    let parent = dir.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let staging = parent.join(format!(".{task_id}.partial"));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let palette = match output {
        AnalysisOutput::Grid(g) => g.palette.clone(),
        _ => super::overlay::default_palette(),
    };
    match output {
        AnalysisOutput::Mask(m) => fs::write(staging.join(MASK_FILE), m.to_text())?,
        AnalysisOutput::Points(p) => fs::write(staging.join(POINTS_FILE), points_text(p))?,
        AnalysisOutput::Grid(g) => fs::write(staging.join(GRID_FILE), g.to_text())?,
    }
    let meta = ResultMeta {
        task_id: task_id.to_owned(),
        slide_id: slide_id.to_owned(),
        analyzer: analyzer.to_owned(),
        params: params.clone(),
        submitted_at,
        finished_at,
        output_kind: output.kind(),
        palette,
        summary: summary(output),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| AnalysisError::Failed(e.to_string()))?;
    fs::write(staging.join(RESULT_META_FILE), text)?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&staging, dir)?;
    Ok(meta)
}

pub fn read_artifact(dir: &Path) -> Result<ResultArtifact, AnalysisError> {
    let missing = || AnalysisError::MissingResult(dir.display().to_string());
    let meta_text = fs::read_to_string(dir.join(RESULT_META_FILE)).map_err(|_| missing())?;
    let meta: ResultMeta = serde_json::from_str(&meta_text).map_err(|e| AnalysisError::Failed(e.to_string()))?;
    let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|_| missing());
    let corrupt = |e: String| AnalysisError::Failed(format!("corrupt artifact in {}: {e}", dir.display()));
    let output = match meta.output_kind {
        OutputKind::Mask => AnalysisOutput::Mask(LabelMask::from_text(&read(MASK_FILE)?).map_err(|e| corrupt(e.to_string()))?),
        OutputKind::Points => {
            let nums: Vec<f64> = read(POINTS_FILE)?
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| corrupt(e.to_string())))
                .collect::<Result<_, _>>()?;
            if !nums.len().is_multiple_of(2) {
                return Err(corrupt("odd coordinate count".into()));
            }
            AnalysisOutput::Points(nums.chunks(2).map(|c| Point::new(c[0], c[1])).collect())
        }
        OutputKind::GridLabels => {
            AnalysisOutput::Grid(GridLabels::from_text(&read(GRID_FILE)?, meta.palette.clone()).map_err(corrupt)?)
        }
    };
    Ok(ResultArtifact { meta, output })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;

    #[test]
    fn round_trip_each_kind() {
        let dir = tempfile::tempdir().unwrap();
        let outputs = [
            AnalysisOutput::Mask(LabelMask::from_bits(Rect::new(1, 2, 2, 1), &[true, false]).unwrap()),
            AnalysisOutput::Points(vec![Point::new(1.5, 2.0), Point::new(3.0, 4.25)]),
            AnalysisOutput::Grid(GridLabels {
                grid_size: 4,
                level: 1,
                downsample: 2.0,
                width: 5,
                height: 4,
                cols: 2,
                rows: 1,
                labels: vec![0, 3],
                palette: super::super::overlay::default_palette(),
            }),
        ];
        for (i, out) in outputs.iter().enumerate() {
            let d = dir.path().join(format!("t{i}"));
            write_artifacts(&d, &format!("t{i}"), "s", "a", &Params::new(), 1, 2, out).unwrap();
            let back = read_artifact(&d).unwrap();
            assert_eq!(&back.output, out);
            assert_eq!(back.meta.finished_at, 2);
        }
        assert!(matches!(
            read_artifact(&dir.path().join("nope")),
            Err(AnalysisError::MissingResult(_))
        ));
    }
}
