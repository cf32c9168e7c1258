//! Application services shared by the HTTP server and the command line:
//! ingest, tile and overlay serving with caches, stroke handling, the
//! analysis task lifecycle and bundle transfer.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read;
use std::num::NonZeroUsize;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use lru::LruCache;
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    read_artifact, render_overlay, write_artifacts, AnalysisError, AnalysisOutput, AnalysisTask, AnalyzerDescriptor,
    AnalyzerRegistry, Params, ResultArtifact, TaskStatus, WorkerPool,
};
use crate::annotation::{
    close_gaps, close_polygon, make_mask, make_point, make_polygon, mask_edit, AnnotationError, AnnotationRecord,
    BrushMode, EditOp, GapPolicy, LabelMask, NewAnnotation, Rgba, StrokeBuffer, StrokeKey, StrokeSegment,
};
use crate::config::Config;
use crate::geom::{Point, Rect};
use crate::slide_io::{encode_tile, Slide, SlideError, TileFormat};
use crate::store::{ReportSource, ReportTable, SlideRow, Store, StoreError, StructuredReport};
use crate::tiler::{
    build_pyramid_from_slide, dzi_document, magnification_to_downsample, make_thumbnail, render_tile,
    MagnificationMap, PyramidMeta, TilerError,
};

const DEFAULT_BRUSH_RADIUS: f64 = 8.0;
const MAX_THUMBNAIL: u32 = 4096;
const RESULT_CACHE: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum PlatformError {
    #[error("unsupported container: {0}")]
    UnsupportedContainer(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("task `{0}` has no result yet")]
    TaskNotDone(String),
    #[error("timed out waiting for task `{0}`")]
    Timeout(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Tiler(#[from] TilerError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Coarse failure classes used for HTTP statuses and exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    NotFound,
    Conflict,
    Invalid,
    Unprocessable,
    Unsupported,
    Internal,
}

impl PlatformError {
    pub fn code(&self) -> &'static str {
        match self {
            PlatformError::UnsupportedContainer(_) => "UnsupportedContainer",
            PlatformError::InvalidRequest(_) => "InvalidRequest",
            PlatformError::TaskNotDone(_) => "TaskNotDone",
            PlatformError::Timeout(_) => "Timeout",
            PlatformError::Store(StoreError::UnreadableSource { source, .. }) => source.code(),
            PlatformError::Store(e) => e.code(),
            PlatformError::Slide(e) => e.code(),
            PlatformError::Tiler(e) => e.code(),
            PlatformError::Analysis(e) => e.code(),
            PlatformError::Annotation(e) => e.code(),
            PlatformError::Io(_) => "IoFailure",
        }
    }

    pub fn class(&self) -> ErrorClass {
        use ErrorClass::*;
        if matches!(self, PlatformError::Store(StoreError::UnreadableSource { .. })) {
            return Unprocessable;
        }
        match self.code() {
            "UnknownSlide" | "UnknownAnnotation" | "UnknownTask" | "UnknownAnalyzer" | "UnknownClassifier"
            | "TileOutOfRange" | "LevelOutOfRange" | "MissingResult" | "RegionOutOfBounds" => NotFound,
            "DuplicateSlideId" | "VersionConflict" | "InvalidTransition" | "TaskNotDone" | "NothingToUndo"
            | "DuplicateName" => Conflict,
            "UnsupportedContainer" | "UnsupportedFormat" => Unsupported,
            "MalformedBundle" | "MalformedDocument" => Unprocessable,
            "IoFailure" | "BackendFailure" | "AnalyzerFailed" | "CodecError" | "Timeout" | "ManifestMismatch"
            | "MissingManifest" => Internal,
            _ => Invalid,
        }
    }

    /// The innermost slide parse error, if this failure is one.
    pub fn slide_error(&self) -> Option<&SlideError> {
        match self {
            PlatformError::Slide(e) => Some(e),
            PlatformError::Store(StoreError::UnreadableSource { source, .. }) => Some(source),
            PlatformError::Tiler(TilerError::Slide(e)) => Some(e),
            PlatformError::Analysis(AnalysisError::Slide(e)) => Some(e),
            _ => None,
        }
    }
}

pub type Result<T, E = PlatformError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub pending: usize,
    pub running: usize,
    pub done: usize,
    pub failed: usize,
}

/// One row of the slide table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideInfo {
    #[serde(flatten)]
    pub slide: SlideRow,
    pub thumbnail_url: String,
    pub dzi_url: String,
    /// Downsample for each named magnification stop the scan supports.
    pub zoom_stops: BTreeMap<String, f64>,
    pub tasks: TaskSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrokeTool {
    Boundary,
    BrushFill,
    BrushErase,
}

impl StrokeTool {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrokeTool::Boundary => "boundary",
            StrokeTool::BrushFill => "brush_fill",
            StrokeTool::BrushErase => "brush_erase",
        }
    }
}

/// Freehand input from a viewer. Boundary segments are buffered until
/// `finish`; brush segments are applied immediately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeSubmission {
    #[serde(default)]
    pub slide_id: String,
    #[serde(default)]
    pub user_id: String,
    pub tool: StrokeTool,
    #[serde(default)]
    pub segments: Vec<StrokeSegment>,
    #[serde(default)]
    pub tau_ms: Option<f64>,
    #[serde(default)]
    pub delta_px: Option<f64>,
    #[serde(default)]
    pub finish: bool,
    /// Mask to edit with a brush. Without it a fill starts a new mask.
    #[serde(default)]
    pub annotation_id: Option<String>,
    #[serde(default)]
    pub expected_version: Option<u64>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub color: Option<Rgba>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeOutcome {
    /// Boundary segments still waiting for `finish`.
    pub pending_segments: usize,
    pub annotations: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGrowRequest {
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub max_area: Option<u64>,
    #[serde(default)]
    pub window: Option<u32>,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub color: Option<Rgba>,
}

fn default_tolerance() -> f64 {
    10.0
}

#[derive(Clone)]
struct StrokeStyle {
    policy: GapPolicy,
    label: String,
    color: Option<Rgba>,
}

struct Inner {
    config: Config,
    store: Store,
    registry: Arc<AnalyzerRegistry>,
    strokes: StrokeBuffer,
    styles: Mutex<HashMap<StrokeKey, StrokeStyle>>,
    slides: Mutex<LruCache<String, Arc<Slide>>>,
    tiles: Mutex<LruCache<String, Arc<Vec<u8>>>>,
    results: Mutex<LruCache<String, Arc<ResultArtifact>>>,
    task_events: (Mutex<u64>, Condvar),
}

/// Cheap to clone; clones share caches and the worker pool.
#[derive(Clone)]
pub struct Platform {
    inner: Arc<Inner>,
    pool: Arc<WorkerPool>,
}

fn cache<K: std::hash::Hash + Eq, V>(n: usize) -> Mutex<LruCache<K, V>> {
    Mutex::new(LruCache::new(NonZeroUsize::new(n.max(1)).expect("nonzero")))
}

impl Platform {
    /// Open the SQLite store under `config.data_dir` with the built-in
    /// analyzers.
    pub fn open(config: Config) -> Result<Platform> {
        config.validate()?;
        let store = Store::open(&config.data_dir)?;
        Platform::with_store(config, store, Arc::new(AnalyzerRegistry::with_builtins()))
    }

    /// Tasks left pending by a previous process are queued again;
    /// tasks that were running are marked failed.
    pub fn with_store(config: Config, store: Store, registry: Arc<AnalyzerRegistry>) -> Result<Platform> {
        config.validate()?;
        let inner = Inner {
            strokes: StrokeBuffer::new(config.stroke_auto_finish_ms),
            styles: Mutex::default(),
            slides: cache(config.slide_cache),
            tiles: cache(config.tile_cache),
            results: cache(RESULT_CACHE),
            task_events: (Mutex::new(0), Condvar::new()),
            store,
            registry,
            config,
        };
        let p = Platform {
            pool: Arc::new(WorkerPool::new(inner.config.workers)),
            inner: Arc::new(inner),
        };
        for t in p.inner.store.list_tasks(None)? {
            match t.status {
                TaskStatus::Running => {
                    p.inner
                        .store
                        .transition_task(&t.id, TaskStatus::Failed, None, Some("interrupted by shutdown".into()))?;
                }
                TaskStatus::Pending => p.enqueue(t.id),
                _ => {}
            }
        }
        Ok(p)
    }

    pub fn config(&self) -> &Config {
        &self.inner.config
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn registry(&self) -> &Arc<AnalyzerRegistry> {
        &self.inner.registry
    }

    // Slides

    /// Register a slide file, build its internal pyramid and thumbnail.
    /// The slide is removed again if any step fails.
    pub fn ingest(&self, source: &Path, name: Option<&str>) -> Result<SlideRow> {
        self.ingest_with(source, name, None)
    }

    /// As [`Platform::ingest`]; `magnification` is used when the file
    /// does not declare its scan magnification.
    pub fn ingest_with(&self, source: &Path, name: Option<&str>, magnification: Option<f64>) -> Result<SlideRow> {
        if let Some(m) = magnification {
            if !(m.is_finite() && m > 0.0) {
                return Err(PlatformError::InvalidRequest(format!("magnification {m} must be positive")));
            }
        }
        let store = &self.inner.store;
        let mut row = store.register_slide(source, name)?;
        if row.base_magnification.is_none() && magnification.is_some() {
            row.base_magnification = magnification;
            if let Err(e) = store.repository().update_slide(&row) {
                let _ = store.remove_slide(&row.slide_id);
                return Err(e.into());
            }
        }
        self.forget_slide(&row.slide_id);
        match self.build_assets(&row) {
            Ok(row) => {
                tracing::info!(slide = %row.slide_id, "ingested {}", source.display());
                Ok(row)
            }
            Err(e) => {
                let _ = store.remove_slide(&row.slide_id);
                Err(e)
            }
        }
    }

    fn build_assets(&self, row: &SlideRow) -> Result<SlideRow> {
        let store = &self.inner.store;
        let src = Slide::open(Path::new(&row.source_path))?;
        let out = store.pyramid_dir(&row.slide_id);
        let meta = PyramidMeta {
            slide_id: Some(row.slide_id.clone()),
            base_magnification: row.base_magnification,
            mpp: row.mpp,
        };
        build_pyramid_from_slide(&src, &self.inner.config.storage, &out, &meta)?;
        let row = store.update_source_path(&row.slide_id, &out)?;
        let slide = Slide::open(&out)?;
        let max = self.inner.config.thumbnail_max;
        let thumb = make_thumbnail(&slide, max)?;
        fs::write(self.thumbnail_path(&row.slide_id, max), encode_tile(&thumb, TileFormat::Png)?)?;
        Ok(row)
    }

    /// Ingest an uploaded file. Only TIFF containers are accepted; the
    /// upload itself is deleted once the pyramid is built.
    pub fn ingest_upload(
        &self,
        upload: &Path,
        name: Option<&str>,
        file_name: Option<&str>,
        magnification: Option<f64>,
    ) -> Result<SlideRow> {
        let result = (|| {
            let mut magic = [0u8; 4];
            let n = fs::File::open(upload)?.read(&mut magic)?;
            if !is_tiff_magic(&magic[..n]) {
                return Err(PlatformError::UnsupportedContainer(format!(
                    "{} is not a TIFF container",
                    file_name.unwrap_or("upload")
                )));
            }
            let mut row = self.ingest_with(upload, name, magnification)?;
            if name.is_none() {
                if let Some(stem) = file_name.and_then(|f| Path::new(f).file_stem()) {
                    row.display_name = stem.to_string_lossy().into_owned();
                    self.inner.store.repository().update_slide(&row)?;
                }
            }
            Ok(row)
        })();
        let _ = fs::remove_file(upload);
        result
    }

    /// Scratch location for incoming uploads.
    pub fn incoming_dir(&self) -> PathBuf {
        self.inner.config.data_dir.join("incoming")
    }

    pub fn slide(&self, slide_id: &str) -> Result<SlideRow> {
        Ok(self.inner.store.slide(slide_id)?)
    }

    pub fn open_slide(&self, slide_id: &str) -> Result<Arc<Slide>> {
        if let Some(s) = self.inner.slides.lock().get(slide_id) {
            return Ok(s.clone());
        }
        let row = self.slide(slide_id)?;
        let slide = Arc::new(Slide::open(Path::new(&row.source_path))?);
        self.inner.slides.lock().put(slide_id.to_owned(), slide.clone());
        Ok(slide)
    }

    fn forget_slide(&self, slide_id: &str) {
        self.inner.slides.lock().pop(slide_id);
        let mut tiles = self.inner.tiles.lock();
        let prefix = format!("{slide_id}/");
        let stale: Vec<String> = tiles.iter().filter(|(k, _)| k.starts_with(&prefix)).map(|(k, _)| k.clone()).collect();
        for k in stale {
            tiles.pop(&k);
        }
    }

    pub fn slide_info(&self, row: SlideRow) -> Result<SlideInfo> {
        let mut tasks = TaskSummary::default();
        for t in self.inner.store.list_tasks(Some(&row.slide_id))? {
            match t.status {
                TaskStatus::Pending => tasks.pending += 1,
                TaskStatus::Running => tasks.running += 1,
                TaskStatus::Done => tasks.done += 1,
                TaskStatus::Failed => tasks.failed += 1,
            }
        }
        let mut zoom_stops = BTreeMap::new();
        if let Some(base) = row.base_magnification {
            let map = MagnificationMap::new(base);
            for name in map.named_stops.keys() {
                if let Ok(ds) = magnification_to_downsample(&map, name) {
                    zoom_stops.insert(name.clone(), ds);
                }
            }
        }
        Ok(SlideInfo {
            thumbnail_url: format!("/api/slides/{}/thumbnail", row.slide_id),
            dzi_url: format!("/api/slides/{}.dzi", row.slide_id),
            zoom_stops,
            tasks,
            slide: row,
        })
    }

    pub fn list_slides(&self) -> Result<Vec<SlideInfo>> {
        self.inner
            .store
            .list_slides()?
            .into_iter()
            .map(|r| self.slide_info(r))
            .collect()
    }

    pub fn dzi(&self, slide_id: &str) -> Result<String> {
        let row = self.slide(slide_id)?;
        Ok(dzi_document(row.width, row.height, &self.inner.config.deep_zoom()))
    }

    /// Encoded Deep Zoom tile. `format` is `jpg`, `jpeg` or `png`.
    pub fn tile(&self, slide_id: &str, level: u32, col: u32, row: u32, format: &str) -> Result<(Arc<Vec<u8>>, TileFormat)> {
        let fmt = parse_format(format)?;
        let key = format!("{slide_id}/{level}/{col}_{row}.{}", fmt.extension());
        if let Some(t) = self.inner.tiles.lock().get(&key) {
            return Ok((t.clone(), fmt));
        }
        let slide = self.open_slide(slide_id)?;
        let bytes = Arc::new(render_tile(&slide, &self.inner.config.deep_zoom(), level, col, row, fmt.extension())?);
        self.inner.tiles.lock().put(key, bytes.clone());
        Ok((bytes, fmt))
    }

    fn thumbnail_path(&self, slide_id: &str, max: u32) -> PathBuf {
        self.inner.store.slide_dir(slide_id).join("thumbs").join(format!("{max}.png"))
    }

    /// PNG no larger than `max` on either side.
    pub fn thumbnail(&self, slide_id: &str, max: u32) -> Result<Vec<u8>> {
        self.slide(slide_id)?;
        let max = max.clamp(1, MAX_THUMBNAIL);
        if let Ok(bytes) = fs::read(self.thumbnail_path(slide_id, max)) {
            return Ok(bytes);
        }
        let slide = self.open_slide(slide_id)?;
        Ok(encode_tile(&make_thumbnail(&slide, max)?, TileFormat::Png)?)
    }

    // Annotations

    pub fn create_annotation(&self, slide_id: &str, user_id: &str, new: NewAnnotation) -> Result<AnnotationRecord> {
        Ok(self.inner.store.create_annotation(slide_id, user_id, new)?)
    }

    /// The annotation, provided it belongs to `slide_id`.
    pub fn annotation_on(&self, slide_id: &str, id: &str) -> Result<AnnotationRecord> {
        let rec = self.inner.store.annotation(id)?;
        if rec.slide_id != slide_id {
            return Err(StoreError::UnknownAnnotation(id.to_owned()).into());
        }
        Ok(rec)
    }

    pub fn list_annotations(&self, slide_id: &str, bbox: Option<Rect>) -> Result<Vec<AnnotationRecord>> {
        Ok(self.inner.store.list_annotations(slide_id, bbox)?)
    }

    /// Apply `op` to an annotation of `slide_id`. `expected_version`
    /// makes the write conditional.
    pub fn edit_annotation(
        &self,
        slide_id: &str,
        id: &str,
        user_id: &str,
        op: EditOp,
        expected_version: Option<u64>,
    ) -> Result<AnnotationRecord> {
        self.annotation_on(slide_id, id)?;
        Ok(self.inner.store.edit_annotation(id, user_id, op, expected_version)?)
    }

    // Strokes

    pub fn submit_stroke(&self, sub: StrokeSubmission) -> Result<StrokeOutcome> {
        if sub.finish && sub.segments.is_empty() {
            return Err(AnnotationError::EmptyInput.into());
        }
        let row = self.slide(&sub.slide_id)?;
        let dims = (row.width, row.height);
        let key = StrokeKey {
            slide_id: sub.slide_id.clone(),
            user_id: sub.user_id.clone(),
            tool: sub.tool.as_str().to_owned(),
        };
        match sub.tool {
            StrokeTool::Boundary => {
                let gap = self.inner.config.gap;
                let style = StrokeStyle {
                    policy: GapPolicy {
                        tau_ms: sub.tau_ms.unwrap_or(gap.tau_ms),
                        delta_px: sub.delta_px.unwrap_or(gap.delta_px),
                    },
                    label: sub.label.clone(),
                    color: sub.color,
                };
                // Reject malformed input before it is buffered.
                close_gaps(&sub.segments, &style.policy).or_else(|e| match e {
                    AnnotationError::EmptyInput => Ok(Vec::new()),
                    e => Err(e),
                })?;
                self.inner.strokes.append(key.clone(), sub.segments, crate::now_millis());
                self.inner.styles.lock().insert(key.clone(), style.clone());
                if !sub.finish {
                    return Ok(StrokeOutcome {
                        pending_segments: self.inner.strokes.pending_count(&key),
                        annotations: Vec::new(),
                    });
                }
                let segments = self.inner.strokes.take(&key);
                self.inner.styles.lock().remove(&key);
                let annotations = self.finish_boundary(&key, dims, &segments, &style)?;
                Ok(StrokeOutcome {
                    pending_segments: 0,
                    annotations,
                })
            }
            StrokeTool::BrushFill | StrokeTool::BrushErase => {
                if sub.segments.is_empty() {
                    return Err(AnnotationError::EmptyInput.into());
                }
                let mode = if sub.tool == StrokeTool::BrushFill {
                    BrushMode::Fill
                } else {
                    BrushMode::Erase
                };
                let radius = sub.radius.unwrap_or(DEFAULT_BRUSH_RADIUS);
                let rec = self.apply_brush(&sub, dims, mode, radius)?;
                Ok(StrokeOutcome {
                    pending_segments: 0,
                    annotations: vec![rec],
                })
            }
        }
    }

    fn finish_boundary(
        &self,
        key: &StrokeKey,
        (w, h): (u32, u32),
        segments: &[StrokeSegment],
        style: &StrokeStyle,
    ) -> Result<Vec<AnnotationRecord>> {
        let clamp = |p: Point| Point::new(p.x.clamp(0.0, (w - 1) as f64), p.y.clamp(0.0, (h - 1) as f64));
        let mut out = Vec::new();
        for polyline in close_gaps(segments, &style.policy)? {
            let polyline: Vec<Point> = polyline.into_iter().map(clamp).collect();
            let ring = match close_polygon(&polyline) {
                Ok(r) => r,
                Err(AnnotationError::DegeneratePolyline) => continue,
                Err(e) => return Err(e.into()),
            };
            let mut rec = match make_polygon(&key.slide_id, &key.user_id, (w, h), &ring, &style.label) {
                Ok(r) => r,
                Err(AnnotationError::DegeneratePolyline) => continue,
                Err(e) => return Err(e.into()),
            };
            if let Some(c) = style.color {
                rec.color = c;
            }
            out.push(self.inner.store.insert_annotation(rec)?);
        }
        if out.is_empty() {
            return Err(AnnotationError::DegeneratePolyline.into());
        }
        Ok(out)
    }

    fn apply_brush(&self, sub: &StrokeSubmission, dims: (u32, u32), mode: BrushMode, radius: f64) -> Result<AnnotationRecord> {
        let store = &self.inner.store;
        let strokes: Vec<Vec<Point>> = sub
            .segments
            .iter()
            .map(|s| s.points.iter().map(|p| p.point()).collect())
            .collect();
        let Some(id) = &sub.annotation_id else {
            if mode == BrushMode::Erase {
                return Err(PlatformError::InvalidRequest("brush_erase needs an annotation_id".into()));
            }
            let mut mask = LabelMask::empty(Rect::default());
            for s in &strokes {
                mask = mask_edit(&mask, s, radius, BrushMode::Fill)?;
            }
            let slide = Rect::new(0, 0, dims.0 as i64, dims.1 as i64);
            let clipped = mask.bounds.intersect(&slide).ok_or(AnnotationError::EmptyIntersection)?;
            let mut rec = make_mask(&sub.slide_id, &sub.user_id, dims, mask.reframe(clipped), &sub.label)?;
            if let Some(c) = sub.color {
                rec.color = c;
            }
            return Ok(store.insert_annotation(rec)?);
        };
        self.annotation_on(&sub.slide_id, id)?;
        let mut expected = sub.expected_version;
        let mut rec = None;
        for brush in strokes {
            let op = match mode {
                BrushMode::Fill => EditOp::MaskFill { brush, radius, clip: None },
                BrushMode::Erase => EditOp::MaskErase { brush, radius, clip: None },
            };
            let r = store.edit_annotation(id, &sub.user_id, op, expected)?;
            expected = expected.map(|_| r.version);
            rec = Some(r);
        }
        Ok(rec.expect("segments are non-empty"))
    }

    /// Close boundary strokes idle past the auto-finish timeout.
    pub fn sweep_strokes(&self, now: i64) -> Vec<AnnotationRecord> {
        let mut out = Vec::new();
        for (key, segments) in self.inner.strokes.take_expired(now) {
            let style = self.inner.styles.lock().remove(&key).unwrap_or_else(|| StrokeStyle {
                policy: self.inner.config.gap,
                label: String::new(),
                color: None,
            });
            let dims = match self.slide(&key.slide_id) {
                Ok(r) => (r.width, r.height),
                Err(_) => continue,
            };
            match self.finish_boundary(&key, dims, &segments, &style) {
                Ok(recs) => out.extend(recs),
                Err(e) => tracing::warn!(slide = %key.slide_id, user = %key.user_id, "dropping stroke: {e}"),
            }
        }
        out
    }

    // Analysis

    pub fn analyzers(&self) -> Vec<AnalyzerDescriptor> {
        self.inner.registry.list()
    }

    fn new_task(&self, slide_id: &str, analyzer: &str, params: Params) -> Result<AnalysisTask> {
        self.slide(slide_id)?;
        let d = self.inner.registry.descriptor(analyzer)?;
        d.resolve_params(&params)?;
        let task = AnalysisTask::new(uuid::Uuid::new_v4().simple().to_string(), slide_id, analyzer, params);
        self.inner.store.create_task(&task)?;
        Ok(task)
    }

    /// Queue an analysis; returns the pending task immediately.
    pub fn submit_task(&self, slide_id: &str, analyzer: &str, params: Params) -> Result<AnalysisTask> {
        let task = self.new_task(slide_id, analyzer, params)?;
        self.enqueue(task.id.clone());
        Ok(task)
    }

    /// Run an analysis on the calling thread and return the finished task.
    pub fn run_task_sync(&self, slide_id: &str, analyzer: &str, params: Params) -> Result<AnalysisTask> {
        let task = self.new_task(slide_id, analyzer, params)?;
        self.inner.run_task(&task.id);
        Ok(self.inner.store.task(&task.id)?)
    }

    fn enqueue(&self, task_id: String) {
        let inner = self.inner.clone();
        self.pool.execute(move || inner.run_task(&task_id));
    }

    pub fn task(&self, id: &str) -> Result<AnalysisTask> {
        Ok(self.inner.store.task(id)?)
    }

    /// Block until the task is done or failed.
    pub fn wait_task(&self, id: &str, timeout: Duration) -> Result<AnalysisTask> {
        let deadline = Instant::now() + timeout;
        let (lock, cv) = &self.inner.task_events;
        let mut generation = lock.lock();
        loop {
            let t = self.task(id)?;
            if t.status.is_terminal() {
                return Ok(t);
            }
            if cv.wait_until(&mut generation, deadline).timed_out() {
                let t = self.task(id)?;
                return if t.status.is_terminal() {
                    Ok(t)
                } else {
                    Err(PlatformError::Timeout(id.to_owned()))
                };
            }
        }
    }

    pub fn result_dir(&self, task: &AnalysisTask) -> Option<PathBuf> {
        task.result_ref.as_deref().map(|r| self.inner.store.resolve(r))
    }

    fn artifact(&self, slide_id: &str, task_id: &str) -> Result<Arc<ResultArtifact>> {
        let task = self.task(task_id)?;
        if task.slide_id != slide_id {
            return Err(StoreError::UnknownTask(task_id.to_owned()).into());
        }
        if let Some(a) = self.inner.results.lock().get(task_id) {
            return Ok(a.clone());
        }
        let dir = self
            .result_dir(&task)
            .ok_or_else(|| PlatformError::TaskNotDone(task_id.to_owned()))?;
        let a = Arc::new(read_artifact(&dir)?);
        self.inner.results.lock().put(task_id.to_owned(), a.clone());
        Ok(a)
    }

    /// RGBA PNG overlay aligned with the image tile at the same address.
    pub fn overlay(&self, slide_id: &str, task_id: &str, level: u32, col: u32, row: u32) -> Result<Arc<Vec<u8>>> {
        let key = format!("{slide_id}/overlay/{task_id}/{level}/{col}_{row}");
        if let Some(t) = self.inner.tiles.lock().get(&key) {
            return Ok(t.clone());
        }
        let artifact = self.artifact(slide_id, task_id)?;
        let slide = self.open_slide(slide_id)?;
        let px = render_overlay(
            &artifact.output,
            &artifact.meta.palette,
            slide.descriptor(),
            &self.inner.config.deep_zoom(),
            level,
            col,
            row,
        )?;
        let bytes = Arc::new(encode_tile(&px, TileFormat::Png)?);
        self.inner.tiles.lock().put(key, bytes.clone());
        Ok(bytes)
    }

    /// Grow a region from a clicked seed and store it as a mask annotation.
    pub fn region_grow(&self, slide_id: &str, user_id: &str, req: &RegionGrowRequest) -> Result<AnnotationRecord> {
        let row = self.slide(slide_id)?;
        let slide = self.open_slide(slide_id)?;
        let mut params = Params::new();
        params.insert("x".into(), req.x.into());
        params.insert("y".into(), req.y.into());
        params.insert("tolerance".into(), req.tolerance.into());
        if let Some(a) = req.max_area {
            params.insert("max_area".into(), a.into());
        }
        if let Some(w) = req.window {
            params.insert("window".into(), w.into());
        }
        let (_, out) = self.inner.registry.run("region_grow", &slide, &params)?;
        let AnalysisOutput::Mask(mask) = out else {
            return Err(AnalysisError::Failed("region_grow did not produce a mask".into()).into());
        };
        let mut rec = make_mask(slide_id, user_id, (row.width, row.height), mask, &req.label)?;
        if let Some(c) = req.color {
            rec.color = c;
        }
        Ok(self.inner.store.insert_annotation(rec)?)
    }

    /// Store the points of a finished point-output task as point
    /// annotations by the machine user.
    pub fn insert_result_points(&self, slide_id: &str, task_id: &str, label: &str) -> Result<Vec<AnnotationRecord>> {
        let row = self.slide(slide_id)?;
        let artifact = self.artifact(slide_id, task_id)?;
        let AnalysisOutput::Points(points) = &artifact.output else {
            return Err(PlatformError::InvalidRequest(format!("task `{task_id}` did not produce points")));
        };
        let user = &self.inner.config.machine_user;
        let mut out = Vec::with_capacity(points.len());
        for p in points {
            let rec = make_point(slide_id, user, (row.width, row.height), *p, label)?;
            out.push(self.inner.store.insert_annotation(rec)?);
        }
        Ok(out)
    }

    // Reports and bundles

    pub fn import_report(&self, slide_id: &str, document: &str, source: ReportSource) -> Result<StructuredReport> {
        Ok(self.inner.store.import_report(slide_id, document, source)?)
    }

    pub fn put_report(&self, report: &StructuredReport) -> Result<()> {
        Ok(self.inner.store.put_report(report)?)
    }

    pub fn search_reports(&self, query: &str, columns: &[String], section: Option<&str>) -> Result<ReportTable> {
        Ok(self.inner.store.search_reports(query, columns, section)?)
    }

    pub fn export_bundle(&self, slide_id: &str, out: &Path) -> Result<PathBuf> {
        Ok(self.inner.store.export_slide_bundle(slide_id, out)?)
    }

    pub fn import_bundle(&self, bundle: &Path) -> Result<SlideRow> {
        let row = self.inner.store.import_slide_bundle(bundle)?;
        self.forget_slide(&row.slide_id);
        Ok(row)
    }
}

impl Inner {
    fn run_task(&self, task_id: &str) {
        let store = &self.store;
        let task = match store.transition_task(task_id, TaskStatus::Running, None, None) {
            Ok(t) => t,
            Err(e) => {
                tracing::error!(task = task_id, "cannot start: {e}");
                return;
            }
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| self.execute(&task))).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "analyzer panicked".into());
            Err(PlatformError::Analysis(AnalysisError::Failed(msg)))
        });
        let r = match outcome {
            Ok(result_ref) => store.transition_task(task_id, TaskStatus::Done, Some(result_ref), None),
            Err(e) => {
                tracing::warn!(task = task_id, analyzer = %task.analyzer_name, "failed: {e}");
                store.transition_task(task_id, TaskStatus::Failed, None, Some(format!("{}: {e}", e.code())))
            }
        };
        if let Err(e) = r {
            tracing::error!(task = task_id, "cannot record outcome: {e}");
        }
        let (lock, cv) = &self.task_events;
        *lock.lock() += 1;
        cv.notify_all();
    }

    fn execute(&self, task: &AnalysisTask) -> Result<String> {
        let row = self.store.slide(&task.slide_id)?;
        let slide = Slide::open(Path::new(&row.source_path))?;
        let (resolved, output) = self.registry.run(&task.analyzer_name, &slide, &task.params)?;
        let result_ref = Store::result_ref(&task.slide_id, &task.id);
        write_artifacts(
            &self.store.resolve(&result_ref),
            &task.id,
            &task.slide_id,
            &task.analyzer_name,
            &resolved,
            task.submitted_at,
            crate::now_millis(),
            &output,
        )?;
        Ok(result_ref)
    }
}

fn parse_format(s: &str) -> Result<TileFormat> {
    match s {
        "jpg" | "jpeg" => Ok(TileFormat::Jpg),
        "png" => Ok(TileFormat::Png),
        other => Err(TilerError::UnsupportedFormat(other.to_owned()).into()),
    }
}

/// Classic or big TIFF byte-order mark and version word.
pub fn is_tiff_magic(head: &[u8]) -> bool {
    matches!(head, [b'I', b'I', 42 | 43, 0] | [b'M', b'M', 0, 42 | 43])
}
