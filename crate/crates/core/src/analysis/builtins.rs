use std::sync::Arc;

use super::classify::{classify_regions, CellClassifier, MeanColorClassifier};
use super::foreground::foreground_mask;
use super::nuclei::{detect_nuclei, NucleusParams, ThresholdMode};
use super::overlay::default_palette;
use super::region_grow::region_grow;
use super::registry::{
    AnalysisContext, AnalysisOutput, AnalyzerDescriptor, AnalyzerRegistry, InputKind, OutputKind, ParamKind,
    ParamSpec, ParamsExt,
};
use super::AnalysisError;
use crate::geom::{Point, Rect};

fn descriptor(name: &str, input_kind: InputKind, output_kind: OutputKind, params: Vec<ParamSpec>) -> AnalyzerDescriptor {
    AnalyzerDescriptor {
        name: name.to_owned(),
        input_kind,
        output_kind,
        params_schema: params,
        single_instance: false,
    }
}

fn non_negative(ctx: &AnalysisContext<'_>, k: &str) -> Result<i64, AnalysisError> {
    let v = ctx.params.int(k);
    if v < 0 {
        return Err(AnalysisError::BadParams(format!("`{k}` must be non-negative")));
    }
    Ok(v)
}

fn level_param(ctx: &AnalysisContext<'_>) -> Result<usize, AnalysisError> {
    let level = non_negative(ctx, "level")? as usize;
    if level >= ctx.slide.level_count() {
        return Err(AnalysisError::BadParams(format!(
            "level {level} out of range (slide has {})",
            ctx.slide.level_count()
        )));
    }
    Ok(level)
}

fn foreground(ctx: &AnalysisContext<'_>) -> Result<AnalysisOutput, AnalysisError> {
    let dim = non_negative(ctx, "work_max_dim")?.clamp(1, u32::MAX as i64) as u32;
    let min_sat = non_negative(ctx, "min_saturation")?.min(255) as u8;
    Ok(AnalysisOutput::Mask(foreground_mask(ctx.slide, dim, min_sat)?))
}

fn nuclei(ctx: &AnalysisContext<'_>) -> Result<AnalysisOutput, AnalysisError> {
    let level = level_param(ctx)?;
    let info = *ctx.slide.descriptor().level(level)?;
    let full = Rect::new(0, 0, info.width as i64, info.height as i64);
    let (w, h) = (non_negative(ctx, "w")?, non_negative(ctx, "h")?);
    let requested = if w == 0 || h == 0 {
        full
    } else {
        Rect::new(ctx.params.int("x"), ctx.params.int("y"), w, h)
    };
    let region = requested
        .intersect(&full)
        .ok_or_else(|| AnalysisError::BadParams("region lies outside the slide".into()))?;
    let threshold_mode = match ctx.params.string("threshold_mode") {
        "otsu" => ThresholdMode::Otsu,
        "fixed" => ThresholdMode::Fixed(non_negative(ctx, "threshold")?.min(255) as u8),
        other => return Err(AnalysisError::BadParams(format!("unknown threshold_mode `{other}`"))),
    };
    let params = NucleusParams {
        threshold_mode,
        min_area: non_negative(ctx, "min_area")? as u64,
        max_area: non_negative(ctx, "max_area")? as u64,
    };
    let img = ctx
        .slide
        .read_region(level, region.x, region.y, region.w as u32, region.h as u32)?;
    let ds = info.downsample;
    let points = detect_nuclei(&img, &params)?
        .into_iter()
        .map(|c| Point::new((region.x as f64 + c.x) * ds, (region.y as f64 + c.y) * ds))
        .collect();
    Ok(AnalysisOutput::Points(points))
}

fn grid(ctx: &AnalysisContext<'_>) -> Result<AnalysisOutput, AnalysisError> {
    let level = level_param(ctx)?;
    let grid_size = non_negative(ctx, "grid_size")?.clamp(0, u32::MAX as i64) as u32;
    let centroids = ctx.params.string("centroids");
    let classifier: Arc<dyn CellClassifier> = if centroids.trim().is_empty() {
        ctx.registry.classifier(ctx.params.string("classifier"))?
    } else {
        Arc::new(MeanColorClassifier::new(MeanColorClassifier::parse_centroids(centroids)?))
    };
    let labels = classify_regions(ctx.slide, level, grid_size, classifier.as_ref(), default_palette())?;
    Ok(AnalysisOutput::Grid(labels))
}

fn grow(ctx: &AnalysisContext<'_>) -> Result<AnalysisOutput, AnalysisError> {
    let d = ctx.slide.descriptor();
    let (x, y) = (ctx.params.float("x").floor() as i64, ctx.params.float("y").floor() as i64);
    if x < 0 || y < 0 || x >= d.width as i64 || y >= d.height as i64 {
        return Err(AnalysisError::SeedOutOfBounds { x, y });
    }
    let half = non_negative(ctx, "window")?.max(1) / 2;
    let window = Rect::new(x - half, y - half, 2 * half + 1, 2 * half + 1)
        .intersect(&Rect::new(0, 0, d.width as i64, d.height as i64))
        .expect("window contains the seed");
    let img = ctx
        .slide
        .read_region(0, window.x, window.y, window.w as u32, window.h as u32)?;
    let tolerance = ctx.params.float("tolerance");
    let max_area = non_negative(ctx, "max_area")? as u64;
    let mut mask = region_grow(&img, (x - window.x, y - window.y), tolerance, max_area)?;
    mask.bounds.x += window.x;
    mask.bounds.y += window.y;
    Ok(AnalysisOutput::Mask(mask))
}

type Builtin = fn(&AnalysisContext<'_>) -> Result<AnalysisOutput, AnalysisError>;

pub(super) fn register_all(r: &AnalyzerRegistry) {
    use ParamKind::*;
    let builtins: Vec<(AnalyzerDescriptor, Builtin)> = vec![
        (
            descriptor(
                "foreground_otsu",
                InputKind::WholeSlide,
                OutputKind::Mask,
                vec![
                    ParamSpec::new("work_max_dim", Int, 2048),
                    ParamSpec::new("min_saturation", Int, 16),
                ],
            ),
            foreground,
        ),
        (
            descriptor(
                "nucleus_detect",
                InputKind::Region,
                OutputKind::Points,
                vec![
                    ParamSpec::new("level", Int, 0),
                    ParamSpec::new("x", Int, 0),
                    ParamSpec::new("y", Int, 0),
                    ParamSpec::new("w", Int, 0),
                    ParamSpec::new("h", Int, 0),
                    ParamSpec::new("threshold_mode", String, "otsu"),
                    ParamSpec::new("threshold", Int, 128),
                    ParamSpec::new("min_area", Int, 20),
                    ParamSpec::new("max_area", Int, 2000),
                ],
            ),
            nuclei,
        ),
        (
            descriptor(
                "grid_classify",
                InputKind::WholeSlide,
                OutputKind::GridLabels,
                vec![
                    ParamSpec::new("level", Int, 0),
                    ParamSpec::new("grid_size", Int, 256),
                    ParamSpec::new("classifier", String, "mean_color"),
                    ParamSpec::new("centroids", String, ""),
                ],
            ),
            grid,
        ),
        (
            descriptor(
                "region_grow",
                InputKind::Click,
                OutputKind::Mask,
                vec![
                    ParamSpec::new("x", Float, 0.0),
                    ParamSpec::new("y", Float, 0.0),
                    ParamSpec::new("tolerance", Float, 10.0),
                    ParamSpec::new("max_area", Int, 100_000),
                    ParamSpec::new("window", Int, 512),
                ],
            ),
            grow,
        ),
    ];
    for (d, f) in builtins {
        r.register(d, Arc::new(f)).expect("built-in names are unique");
    }
}
