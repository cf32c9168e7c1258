use std::collections::HashMap;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::header::{CACHE_CONTROL, CONTENT_TYPE, ETAG, IF_MATCH, LOCATION};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;

use super::{user_of, ApiError, AppState};
use crate::analysis::Params;
use crate::annotation::{AnnotationRecord, EditOp, NewAnnotation, Rgba};
use crate::geom::{Point, Rect};
use crate::platform::{Platform, PlatformError, RegionGrowRequest, StrokeSubmission};
use crate::store::{ReportSection, ReportSource, StructuredReport};

const IMMUTABLE: &str = "public, max-age=31536000, immutable";

pub(super) fn routes() -> Router<AppState> {
    Router::new()
        .route(
            "/api/slides",
            get(list_slides).post(upload_slide).layer(DefaultBodyLimit::disable()),
        )
        .route("/api/slides/{id}", get(slide_or_dzi))
        .route("/api/slides/{id}/thumbnail", get(thumbnail))
        .route("/api/slides/{id}/{level}/{tile}", get(tile))
        .route("/api/slides/{id}/annotations", get(list_annotations).post(create_annotation))
        .route(
            "/api/slides/{id}/annotations/{aid}",
            get(get_annotation).put(update_annotation).delete(delete_annotation),
        )
        .route("/api/slides/{id}/annotations/{aid}/undo", post(undo_annotation))
        .route("/api/slides/{id}/annotations/{aid}/clear", post(clear_annotation))
        .route("/api/slides/{id}/strokes", post(submit_stroke))
        .route("/api/slides/{id}/regiongrow", post(region_grow))
        .route("/api/slides/{id}/report", get(get_report).post(post_report))
        .route("/api/slides/{id}/overlays/{task_id}/{level}/{tile}", get(overlay))
        .route("/api/analyzers", get(analyzers))
        .route("/api/tasks", get(list_tasks).post(submit_task))
        .route("/api/tasks/{id}", get(get_task))
        .route("/api/reports", get(search_reports))
        .fallback(|| async { ApiError::not_found("no such route") })
}

async fn blocking<T, F>(platform: &Platform, f: F) -> Result<T, ApiError>
where
    F: FnOnce(Platform) -> Result<T, PlatformError> + Send + 'static,
    T: Send + 'static,
{
    let p = platform.clone();
    match tokio::task::spawn_blocking(move || f(p)).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Panicked", e.to_string())),
    }
}

fn parse_json<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("InvalidBody", e.to_string()))
}

fn with_etag(status: StatusCode, rec: AnnotationRecord) -> Response {
    let etag = HeaderValue::from_str(&format!("\"{}\"", rec.version)).expect("digits are valid");
    (status, [(ETAG, etag)], Json(rec)).into_response()
}

/// `If-Match: 3`, `"3"` or `W/"3"`.
fn if_match(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    let Some(v) = headers.get(IF_MATCH) else {
        return Ok(None);
    };
    let bad = || ApiError::bad_request("InvalidIfMatch", "If-Match must carry an annotation version");
    let s = v.to_str().map_err(|_| bad())?.trim();
    let s = s.strip_prefix("W/").unwrap_or(s).trim_matches('"');
    s.parse().map(Some).map_err(|_| bad())
}

fn bytes_response(bytes: &[u8], mime: &'static str, immutable: bool) -> Response {
    let mut resp = (StatusCode::OK, [(CONTENT_TYPE, mime)], bytes.to_vec()).into_response();
    if immutable {
        resp.headers_mut().insert(CACHE_CONTROL, HeaderValue::from_static(IMMUTABLE));
    }
    resp
}

/// `{col}_{row}.{fmt}`.
fn parse_tile(tile: &str) -> Option<(u32, u32, &str)> {
    let (stem, fmt) = tile.rsplit_once('.')?;
    let (c, r) = stem.split_once('_')?;
    Some((c.parse().ok()?, r.parse().ok()?, fmt))
}

// Slides

async fn list_slides(State(s): State<AppState>) -> Result<Response, ApiError> {
    let rows = blocking(&s.platform, |p| p.list_slides()).await?;
    Ok(Json(rows).into_response())
}

async fn upload_slide(State(s): State<AppState>, mut form: Multipart) -> Result<Response, ApiError> {
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::bad_request("InvalidBody", e.body_text());
    let dir = s.platform.incoming_dir();
    tokio::fs::create_dir_all(&dir)
        .await
        .map_err(|e| ApiError::from(PlatformError::Io(e)))?;
    let mut name: Option<String> = None;
    let mut magnification: Option<f64> = None;
    let mut upload: Option<(PathBuf, Option<String>)> = None;
    let result = async {
        while let Some(mut field) = form.next_field().await.map_err(bad)? {
            match field.name() {
                Some("name") => {
                    let v = field.text().await.map_err(bad)?;
                    name = Some(v.trim().to_owned()).filter(|v| !v.is_empty());
                }
                Some("magnification") => {
                    let v = field.text().await.map_err(bad)?;
                    let v = v.trim();
                    if !v.is_empty() {
                        magnification = Some(v.parse().map_err(|_| {
                            ApiError::bad_request("InvalidBody", format!("magnification `{v}` is not a number"))
                        })?);
                    }
                }
                Some("file") if upload.is_none() => {
                    let file_name = field.file_name().map(str::to_owned);
                    let path = dir.join(format!("{}.upload", uuid::Uuid::new_v4().simple()));
                    upload = Some((path.clone(), file_name));
                    let mut f = tokio::fs::File::create(&path).await.map_err(|e| ApiError::from(PlatformError::Io(e)))?;
                    while let Some(chunk) = field.chunk().await.map_err(bad)? {
                        f.write_all(&chunk).await.map_err(|e| ApiError::from(PlatformError::Io(e)))?;
                    }
                    f.flush().await.map_err(|e| ApiError::from(PlatformError::Io(e)))?;
                }
                _ => {}
            }
        }
        Ok::<(), ApiError>(())
    }
    .await;
    if let Err(e) = result {
        if let Some((path, _)) = &upload {
            let _ = tokio::fs::remove_file(path).await;
        }
        return Err(e);
    }
    let Some((path, file_name)) = upload else {
        return Err(ApiError::bad_request("InvalidBody", "multipart field `file` is required"));
    };
    let row = blocking(&s.platform, move |p| {
        p.ingest_upload(&path, name.as_deref(), file_name.as_deref(), magnification)
    }).await?;
    let location = HeaderValue::from_str(&format!("/api/slides/{}", row.slide_id)).expect("slide ids are ascii");
    Ok((StatusCode::CREATED, [(LOCATION, location)], Json(row)).into_response())
}

/// `GET /api/slides/{id}.dzi` or `GET /api/slides/{id}`.
async fn slide_or_dzi(State(s): State<AppState>, Path(seg): Path<String>) -> Result<Response, ApiError> {
    if let Some(id) = seg.strip_suffix(".dzi") {
        let id = id.to_owned();
        let doc = blocking(&s.platform, move |p| p.dzi(&id)).await?;
        return Ok(bytes_response(doc.as_bytes(), "application/xml", false));
    }
    let info = blocking(&s.platform, move |p| {
        let row = p.slide(&seg)?;
        p.slide_info(row)
    })
    .await?;
    Ok(Json(info).into_response())
}

async fn thumbnail(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let max = match q.get("max") {
        Some(v) => v
            .parse::<u32>()
            .map_err(|_| ApiError::bad_request("InvalidQuery", "max must be a positive integer"))?,
        None => s.platform.config().thumbnail_max,
    };
    let png = blocking(&s.platform, move |p| p.thumbnail(&id, max)).await?;
    Ok(bytes_response(&png, "image/png", false))
}

async fn tile(State(s): State<AppState>, Path((files, level, tile)): Path<(String, String, String)>) -> Result<Response, ApiError> {
    let not_found = || ApiError::not_found(format!("no tile at {files}/{level}/{tile}"));
    let id = files.strip_suffix("_files").ok_or_else(not_found)?.to_owned();
    let level: u32 = level.parse().map_err(|_| not_found())?;
    let (col, row, fmt) = parse_tile(&tile).ok_or_else(not_found)?;
    let fmt = fmt.to_owned();
    let (bytes, fmt) = blocking(&s.platform, move |p| p.tile(&id, level, col, row, &fmt)).await?;
    Ok(bytes_response(&bytes, fmt.mime(), true))
}

async fn overlay(
    State(s): State<AppState>,
    Path((id, task_id, level, tile)): Path<(String, String, String, String)>,
) -> Result<Response, ApiError> {
    let not_found = || ApiError::not_found(format!("no overlay tile at {level}/{tile}"));
    let level: u32 = level.parse().map_err(|_| not_found())?;
    let (col, row, fmt) = parse_tile(&tile).ok_or_else(not_found)?;
    if fmt != "png" {
        return Err(PlatformError::Tiler(crate::tiler::TilerError::UnsupportedFormat(fmt.to_owned())).into());
    }
    let png = blocking(&s.platform, move |p| p.overlay(&id, &task_id, level, col, row)).await?;
    Ok(bytes_response(&png, "image/png", true))
}

// Annotations

/// `x,y,w,h`; fractional values are widened to whole pixels.
fn parse_bbox(s: &str) -> Result<Rect, ApiError> {
    let bad = || ApiError::bad_request("InvalidQuery", "bbox must be x,y,w,h");
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [x, y, w, h] = v[..] else { return Err(bad()) };
    if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) || w < 0.0 || h < 0.0 {
        return Err(bad());
    }
    let (x0, y0) = (x.floor(), y.floor());
    Ok(Rect::new(x0 as i64, y0 as i64, ((x + w).ceil() - x0) as i64, ((y + h).ceil() - y0) as i64))
}

async fn list_annotations(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let bbox = q.get("bbox").filter(|b| !b.is_empty()).map(|b| parse_bbox(b)).transpose()?;
    let recs = blocking(&s.platform, move |p| p.list_annotations(&id, bbox)).await?;
    Ok(Json(recs).into_response())
}

async fn create_annotation(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let new: NewAnnotation = parse_json(&body)?;
    let user = user_of(&headers);
    let rec = blocking(&s.platform, move |p| p.create_annotation(&id, &user, new)).await?;
    Ok(with_etag(StatusCode::CREATED, rec))
}

async fn get_annotation(State(s): State<AppState>, Path((id, aid)): Path<(String, String)>) -> Result<Response, ApiError> {
    let rec = blocking(&s.platform, move |p| p.annotation_on(&id, &aid)).await?;
    Ok(with_etag(StatusCode::OK, rec))
}

#[derive(Debug, Deserialize, Serialize)]
struct UpdateBody {
    #[serde(with = "crate::annotation::flat_coords")]
    coords: Vec<Point>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    color: Option<Rgba>,
}

async fn update_annotation(
    State(s): State<AppState>,
    Path((id, aid)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let expected = if_match(&headers)?.ok_or_else(|| {
        ApiError::new(
            StatusCode::PRECONDITION_REQUIRED,
            "MissingIfMatch",
            "updates must carry If-Match with the edited version",
        )
    })?;
    let b: UpdateBody = parse_json(&body)?;
    let user = user_of(&headers);
    let op = EditOp::UpdateCoords {
        coords: b.coords,
        label: b.label,
        color: b.color,
    };
    let rec = blocking(&s.platform, move |p| p.edit_annotation(&id, &aid, &user, op, Some(expected))).await?;
    Ok(with_etag(StatusCode::OK, rec))
}

async fn edit_with(s: AppState, id: String, aid: String, headers: HeaderMap, op: EditOp) -> Result<Response, ApiError> {
    let expected = if_match(&headers)?;
    let user = user_of(&headers);
    let rec = blocking(&s.platform, move |p| p.edit_annotation(&id, &aid, &user, op, expected)).await?;
    Ok(with_etag(StatusCode::OK, rec))
}

async fn delete_annotation(
    State(s): State<AppState>,
    Path((id, aid)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    edit_with(s, id, aid, headers, EditOp::Clear).await
}

async fn undo_annotation(
    State(s): State<AppState>,
    Path((id, aid)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    edit_with(s, id, aid, headers, EditOp::Undo).await
}

async fn clear_annotation(
    State(s): State<AppState>,
    Path((id, aid)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    edit_with(s, id, aid, headers, EditOp::Clear).await
}

async fn submit_stroke(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let mut sub: StrokeSubmission = parse_json(&body)?;
    if !sub.slide_id.is_empty() && sub.slide_id != id {
        return Err(ApiError::bad_request("InvalidBody", "slide_id disagrees with the path"));
    }
    sub.slide_id = id;
    if headers.contains_key(super::USER_HEADER) || sub.user_id.is_empty() {
        sub.user_id = user_of(&headers);
    }
    if sub.expected_version.is_none() {
        sub.expected_version = if_match(&headers)?;
    }
    let out = blocking(&s.platform, move |p| p.submit_stroke(sub)).await?;
    let status = if out.annotations.is_empty() {
        StatusCode::ACCEPTED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(out)).into_response())
}

async fn region_grow(
    State(s): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: RegionGrowRequest = parse_json(&body)?;
    let user = user_of(&headers);
    let rec = blocking(&s.platform, move |p| p.region_grow(&id, &user, &req)).await?;
    Ok(with_etag(StatusCode::CREATED, rec))
}

// Analysis

async fn analyzers(State(s): State<AppState>) -> Result<Response, ApiError> {
    Ok(Json(s.platform.analyzers()).into_response())
}

#[derive(Debug, Deserialize)]
struct TaskBody {
    slide_id: String,
    analyzer: String,
    #[serde(default)]
    params: Params,
}

async fn submit_task(State(s): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let b: TaskBody = parse_json(&body)?;
    let task = blocking(&s.platform, move |p| p.submit_task(&b.slide_id, &b.analyzer, b.params)).await?;
    let location = HeaderValue::from_str(&format!("/api/tasks/{}", task.id)).expect("task ids are ascii");
    Ok((StatusCode::ACCEPTED, [(LOCATION, location)], Json(task)).into_response())
}

async fn get_task(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let task = blocking(&s.platform, move |p| p.task(&id)).await?;
    Ok(Json(task).into_response())
}

async fn list_tasks(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let slide = q.get("slide_id").cloned();
    let tasks = blocking(&s.platform, move |p| {
        if let Some(id) = &slide {
            p.slide(id)?;
        }
        Ok(p.store().list_tasks(slide.as_deref())?)
    })
    .await?;
    Ok(Json(tasks).into_response())
}

// Reports

#[derive(Debug, Deserialize)]
struct ReportBody {
    #[serde(default)]
    document: Option<String>,
    #[serde(default)]
    sections: Option<Vec<ReportSection>>,
    #[serde(default)]
    source: ReportSource,
}

/// JSON with `document` text or `sections`; any other content type is
/// taken as the document text itself.
async fn post_report(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let is_json = headers
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let parse_source = |v: &str| {
        ReportSource::parse(v).ok_or_else(|| ApiError::bad_request("InvalidBody", format!("unknown report source `{v}`")))
    };
    let report = if is_json {
        let b: ReportBody = parse_json(&body)?;
        match (b.document, b.sections) {
            (Some(doc), None) => blocking(&s.platform, move |p| p.import_report(&id, &doc, b.source)).await?,
            (None, Some(sections)) => {
                let report = StructuredReport {
                    slide_id: id,
                    sections,
                    source: b.source,
                };
                blocking(&s.platform, move |p| p.put_report(&report).map(|_| report)).await?
            }
            _ => return Err(ApiError::bad_request("InvalidBody", "give exactly one of `document` or `sections`")),
        }
    } else {
        let source = q.get("source").map(|v| parse_source(v)).transpose()?.unwrap_or_default();
        let doc = String::from_utf8(body.to_vec()).map_err(|_| ApiError::bad_request("InvalidBody", "report must be UTF-8"))?;
        blocking(&s.platform, move |p| p.import_report(&id, &doc, source)).await?
    };
    Ok((StatusCode::CREATED, Json(report)).into_response())
}

async fn get_report(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let report = blocking(&s.platform, move |p| {
        p.slide(&id)?;
        p.store()
            .report(&id)?
            .ok_or_else(|| PlatformError::Store(crate::store::StoreError::UnknownSlide(format!("{id} (no report)"))))
    })
    .await?;
    Ok(Json(report).into_response())
}

async fn search_reports(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Result<Response, ApiError> {
    let query = q.get("q").cloned().unwrap_or_default();
    let columns: Vec<String> = q
        .get("columns")
        .map(|c| c.split(',').map(str::trim).filter(|c| !c.is_empty()).map(str::to_owned).collect())
        .unwrap_or_default();
    let section = q.get("section").cloned().filter(|v| !v.is_empty());
    let table = blocking(&s.platform, move |p| p.search_reports(&query, &columns, section.as_deref())).await?;
    Ok(Json(table).into_response())
}
