//! Route-by-route HTTP contract, driven in-process through the router.
#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::http::{HeaderMap, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pimip::annotation::{query_viewport, AnnotationRecord};
use pimip::platform::Platform;
use pimip::Rect;
use rand::Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use crate::common;

pub struct Reply {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("body is not JSON ({e}): {}", String::from_utf8_lossy(&self.body)))
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(name).and_then(|v| v.to_str().ok())
    }

    /// Assert an error reply and return its code.
    pub fn error(&self, status: u16) -> String {
        assert_eq!(
            self.status.as_u16(),
            status,
            "expected {status}, body {}",
            String::from_utf8_lossy(&self.body)
        );
        let v = self.json();
        assert!(v["message"].is_string(), "error body without message: {v}");
        v["code"].as_str().expect("error body carries a code").to_owned()
    }
}

#[derive(Clone)]
pub struct Client {
    app: Router,
}

impl Client {
    pub fn new(platform: Platform) -> Self {
        Client {
            app: pimip::api::router(platform),
        }
    }

    pub async fn send(&self, req: Request<Body>) -> Reply {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let (parts, body) = resp.into_parts();
        Reply {
            status: parts.status,
            headers: parts.headers,
            body: body.collect().await.unwrap().to_bytes(),
        }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.send(Request::get(uri).body(Body::empty()).unwrap()).await
    }

    pub async fn json(&self, method: Method, uri: &str, body: Value, headers: &[(&str, &str)]) -> Reply {
        let mut b = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json");
        for (k, v) in headers {
            b = b.header(*k, *v);
        }
        self.send(b.body(Body::from(body.to_string())).unwrap()).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> Reply {
        self.json(Method::POST, uri, body, &[("x-user", "alice")]).await
    }

    pub async fn upload(&self, file: &[u8], file_name: &str, name: Option<&str>) -> Reply {
        let boundary = "contract-boundary-7f3a";
        let mut body = Vec::new();
        if let Some(n) = name {
            body.extend_from_slice(
                format!("--{boundary}\r\nContent-Disposition: form-data; name=\"name\"\r\n\r\n{n}\r\n").as_bytes(),
            );
        }
        body.extend_from_slice(
            format!(
                "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{file_name}\"\r\n\
                 Content-Type: application/octet-stream\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(file);
        body.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
        let req = Request::post("/api/slides")
            .header("content-type", format!("multipart/form-data; boundary={boundary}"))
            .body(Body::from(body))
            .unwrap();
        self.send(req).await
    }
}

pub fn decode_png(bytes: &[u8]) -> image::DynamicImage {
    image::load_from_memory_with_format(bytes, image::ImageFormat::Png).unwrap()
}

/// A 1000×600 three-level slide scanned at 40×.
pub fn slide_file() -> Vec<u8> {
    let (base, _) = common::tissue(&mut common::rng(11), 1000, 600);
    let levels: Vec<_> = common::oracle_levels(&base).into_iter().take(3).collect();
    common::tiff_bytes(&levels, 128, Some(40.0))
}

async fn wait_done(c: &Client, task_id: &str) -> Value {
    for _ in 0..600 {
        let t = c.get(&format!("/api/tasks/{task_id}")).await.json();
        match t["status"].as_str() {
            Some("done") | Some("failed") => return t,
            _ => tokio::time::sleep(Duration::from_millis(50)).await,
        }
    }
    panic!("task {task_id} did not finish");
}

fn record(v: &Value) -> AnnotationRecord {
    serde_json::from_value(v.clone()).unwrap()
}

/// Run the whole contract against a fresh data directory under `dir`.
/// Returns the number of routes exercised.
pub async fn run(dir: &Path) -> usize {
    let platform = common::platform(dir);
    let c = Client::new(platform.clone());
    let mut routes = 0;

    // GET /api/slides on an empty store
    let r = c.get("/api/slides").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json(), json!([]));
    routes += 1;

    // POST /api/slides
    let file = slide_file();
    let r = c.upload(&file, "case-001.svs", Some("case-001")).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.header("location"), Some("/api/slides/case-001"));
    let row = r.json();
    assert_eq!(row["slide_id"], "case-001");
    assert_eq!((row["width"].as_u64(), row["height"].as_u64()), (Some(1000), Some(600)));
    assert_eq!(row["base_magnification"].as_f64(), Some(40.0));
    assert!(dir.join("data/slides/case-001/annotations").is_dir());
    assert_eq!(c.upload(&file, "again.svs", Some("case-001")).await.error(409), "DuplicateSlideId");
    assert_eq!(c.upload(b"\x89PNG\r\n\x1a\nnot a slide", "x.png", None).await.error(415), "UnsupportedContainer");
    assert_eq!(c.upload(&file[..64], "cut.tif", None).await.error(422), "TruncatedFile");
    let r = c.upload(&file, "anon-scan.tif", None).await;
    assert_eq!(r.status, StatusCode::CREATED);
    let anon = r.json();
    assert_eq!(anon["display_name"], "anon-scan");
    assert_ne!(anon["slide_id"], "anon-scan");
    let no_file = Request::post("/api/slides")
        .header("content-type", "multipart/form-data; boundary=b")
        .body(Body::from("--b\r\nContent-Disposition: form-data; name=\"name\"\r\n\r\nx\r\n--b--\r\n"))
        .unwrap();
    assert_eq!(c.send(no_file).await.error(400), "InvalidBody");
    let incoming = dir.join("data/incoming");
    assert_eq!(std::fs::read_dir(&incoming).map(|d| d.count()).unwrap_or(0), 0, "uploads are cleaned up");
    routes += 1;

    let r = c.get("/api/slides").await;
    let rows = r.json();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    let first = rows.as_array().unwrap().iter().find(|s| s["slide_id"] == "case-001").unwrap();
    assert_eq!(first["thumbnail_url"], "/api/slides/case-001/thumbnail");
    assert_eq!(first["tasks"], json!({"pending": 0, "running": 0, "done": 0, "failed": 0}));

    // GET /api/slides/{id}
    let info = c.get("/api/slides/case-001").await.json();
    assert_eq!(info["zoom_stops"], json!({"high": 1.0, "low": 2.0}));
    assert_eq!(info["dzi_url"], "/api/slides/case-001.dzi");
    assert_eq!(c.get("/api/slides/nope").await.error(404), "UnknownSlide");
    routes += 1;

    // GET /api/slides/{id}.dzi
    let r = c.get("/api/slides/case-001.dzi").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(
        String::from_utf8(r.body.to_vec()).unwrap(),
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?><Image xmlns=\"http://schemas.microsoft.com/deepzoom/2008\" \
         Format=\"jpg\" Overlap=\"1\" TileSize=\"254\"><Size Width=\"1000\" Height=\"600\"/></Image>"
    );
    assert_eq!(c.get("/api/slides/nope.dzi").await.error(404), "UnknownSlide");
    routes += 1;

    // GET /api/slides/{id}/thumbnail
    let r = c.get("/api/slides/case-001/thumbnail?max=100").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.header("content-type"), Some("image/png"));
    let t = decode_png(&r.body);
    assert_eq!((t.width(), t.height()), (100, 60));
    let t = decode_png(&c.get("/api/slides/case-001/thumbnail").await.body);
    assert_eq!((t.width(), t.height()), (256, 154));
    assert_eq!(c.get("/api/slides/nope/thumbnail").await.error(404), "UnknownSlide");
    assert_eq!(c.get("/api/slides/case-001/thumbnail?max=big").await.error(400), "InvalidQuery");
    routes += 1;

    // GET /api/slides/{id}_files/{level}/{col}_{row}.{fmt}
    let r = c.get("/api/slides/case-001_files/10/0_0.jpg").await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.header("content-type"), Some("image/jpeg"));
    assert!(r.header("cache-control").unwrap().contains("immutable"));
    let img = image::load_from_memory(&r.body).unwrap();
    assert_eq!((img.width(), img.height()), (255, 255));
    let r = c.get("/api/slides/case-001_files/10/1_0.png").await;
    let tile = decode_png(&r.body).to_rgb8();
    assert_eq!((tile.width(), tile.height()), (256, 255));
    let slide = platform.open_slide("case-001").unwrap();
    let want = slide.read_region(0, 253, 0, 256, 255).unwrap();
    assert_eq!(tile.as_raw(), want.data(), "png tile equals the base-level crop");
    let r = c.get("/api/slides/case-001_files/0/0_0.png").await;
    let top = decode_png(&r.body);
    assert_eq!((top.width(), top.height()), (1, 1));
    assert_eq!(c.get("/api/slides/case-001_files/10/4_0.jpg").await.error(404), "TileOutOfRange");
    assert_eq!(c.get("/api/slides/case-001_files/11/0_0.jpg").await.error(404), "LevelOutOfRange");
    assert_eq!(c.get("/api/slides/case-001_files/10/0_0.bmp").await.error(415), "UnsupportedFormat");
    assert_eq!(c.get("/api/slides/nope_files/10/0_0.jpg").await.error(404), "UnknownSlide");
    assert_eq!(c.get("/api/slides/case-001/10/0_0.jpg").await.error(404), "UnknownRoute");
    routes += 1;

    // POST /api/slides/{id}/annotations
    let r = c
        .post("/api/slides/case-001/annotations", json!({"kind": "point", "coords": [100, 200], "label": "nucleus"}))
        .await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.header("etag"), Some("\"1\""));
    let point = record(&r.json());
    assert_eq!(point.user_id, "alice");
    assert_eq!(point.version, 1);
    let r = c
        .post("/api/slides/case-001/annotations", json!({"kind": "rectangle", "coords": [600, 400, 500, 300], "label": "roi"}))
        .await;
    let rect = record(&r.json());
    assert_eq!(r.json()["coords"], json!([500.0, 300.0, 600.0, 300.0, 600.0, 400.0, 500.0, 400.0]));
    let r = c
        .post(
            "/api/slides/case-001/annotations",
            json!({"kind": "polygon", "coords": [800, 50, 900, 50, 850, 120, 800, 50], "label": "tumor", "color": "#00ff0080"}),
        )
        .await;
    assert_eq!(r.status, StatusCode::CREATED);
    let poly = record(&r.json());
    assert_eq!(r.json()["color"], "#00ff0080");
    let err = c
        .post("/api/slides/case-001/annotations", json!({"kind": "point", "coords": [1001, 0]}))
        .await
        .error(400);
    assert_eq!(err, "OutOfBounds");
    let err = c
        .post("/api/slides/case-001/annotations", json!({"kind": "rectangle", "coords": [10, 10, 10, 40]}))
        .await
        .error(400);
    assert_eq!(err, "DegenerateRect");
    let bad = Request::post("/api/slides/case-001/annotations")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(c.send(bad).await.error(400), "InvalidBody");
    let err = c.post("/api/slides/nope/annotations", json!({"kind": "point", "coords": [1, 1]})).await.error(404);
    assert_eq!(err, "UnknownSlide");
    routes += 1;

    // GET /api/slides/{id}/annotations?bbox=
    let all = c.get("/api/slides/case-001/annotations").await.json();
    assert_eq!(all.as_array().unwrap().len(), 3);
    let hit = c.get("/api/slides/case-001/annotations?bbox=90,190,20,20").await.json();
    let ids: Vec<&str> = hit.as_array().unwrap().iter().map(|a| a["id"].as_str().unwrap()).collect();
    assert_eq!(ids, [point.id.as_str()]);
    assert_eq!(c.get("/api/slides/case-001/annotations?bbox=0,0,10,10").await.json(), json!([]));
    assert_eq!(c.get("/api/slides/case-001/annotations?bbox=").await.json(), all);
    assert_eq!(c.get("/api/slides/case-001/annotations?bbox=1,2,3").await.error(400), "InvalidQuery");
    assert_eq!(c.get("/api/slides/nope/annotations").await.error(404), "UnknownSlide");
    let stored: Vec<AnnotationRecord> = platform.list_annotations("case-001", None).unwrap();
    let mut rng = common::rng(5);
    for _ in 0..50 {
        let (x, y) = (rng.random_range(-50..1000i64), rng.random_range(-50..600i64));
        let (w, h) = (rng.random_range(1..400i64), rng.random_range(1..300i64));
        let got: Vec<AnnotationRecord> = serde_json::from_value(
            c.get(&format!("/api/slides/case-001/annotations?bbox={x},{y},{w},{h}")).await.json(),
        )
        .unwrap();
        let r = Rect::new(x, y, w, h);
        let scan: Vec<&AnnotationRecord> = stored.iter().filter(|a| a.bbox().intersect(&r).is_some()).collect();
        assert_eq!(got, query_viewport(&stored, r));
        assert_eq!(got.iter().collect::<Vec<_>>(), scan);
    }
    routes += 1;

    // GET/PUT/DELETE /api/slides/{id}/annotations/{aid}
    let base = format!("/api/slides/case-001/annotations/{}", rect.id);
    let r = c.get(&base).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.header("etag"), Some("\"1\""));
    assert_eq!(c.get("/api/slides/case-001/annotations/missing").await.error(404), "UnknownAnnotation");
    assert_eq!(
        c.get(&format!("/api/slides/{}/annotations/{}", anon["slide_id"].as_str().unwrap(), rect.id)).await.error(404),
        "UnknownAnnotation"
    );
    let upd = json!({"coords": [500, 300, 650, 300, 650, 400, 500, 400], "label": "roi-2"});
    let r = c.json(Method::PUT, &base, upd.clone(), &[("x-user", "bob"), ("if-match", "1")]).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.json()["version"], 2);
    assert_eq!(r.json()["label"], "roi-2");
    assert_eq!(r.header("etag"), Some("\"2\""));
    let r = c.json(Method::PUT, &base, upd.clone(), &[("x-user", "carol"), ("if-match", "1")]).await;
    assert_eq!(r.error(409), "VersionConflict");
    assert_eq!(c.json(Method::PUT, &base, upd.clone(), &[]).await.error(428), "MissingIfMatch");
    assert_eq!(c.json(Method::PUT, &base, upd, &[("if-match", "two")]).await.error(400), "InvalidIfMatch");
    let r = c.json(Method::DELETE, &base, json!(null), &[("if-match", "\"2\"")]).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["deleted"], true);
    assert_eq!(c.get("/api/slides/case-001/annotations").await.json().as_array().unwrap().len(), 2);
    routes += 1;

    // POST .../undo and .../clear
    let r = c.post(&format!("{base}/undo"), json!(null)).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["deleted"], false);
    assert_eq!(r.json()["label"], "roi-2");
    assert_eq!(r.json()["version"], 4);
    let pbase = format!("/api/slides/case-001/annotations/{}", poly.id);
    let r = c.post(&format!("{pbase}/clear"), json!(null)).await;
    assert_eq!(r.json()["deleted"], true);
    let r = c.post(&format!("{pbase}/undo"), json!(null)).await;
    assert_eq!(r.json()["deleted"], false);
    let r = c.post(&format!("{pbase}/undo"), json!(null)).await;
    assert_eq!(r.json()["deleted"], true, "undoing the create removes the record");
    assert_eq!(c.post(&format!("{pbase}/undo"), json!(null)).await.error(409), "NothingToUndo");
    let stale = c.json(Method::POST, &format!("{base}/clear"), json!(null), &[("if-match", "1")]).await;
    assert_eq!(stale.error(409), "VersionConflict");
    assert_eq!(c.post("/api/slides/case-001/annotations/missing/undo", json!(null)).await.error(404), "UnknownAnnotation");
    routes += 2;

    // POST /api/slides/{id}/strokes
    let seg = |pts: &[(f64, f64, f64)]| {
        json!({"points": pts.iter().map(|&(x, y, t)| json!({"x": x, "y": y, "t": t})).collect::<Vec<_>>(),
               "pointer_type": "stylus", "device_zoom": 1.0})
    };
    let s1 = seg(&[(100.0, 100.0, 0.0), (200.0, 100.0, 50.0), (200.0, 200.0, 100.0)]);
    let s2 = seg(&[(195.0, 205.0, 180.0), (100.0, 200.0, 250.0)]);
    let r = c.post("/api/slides/case-001/strokes", json!({"tool": "boundary", "segments": [s1]})).await;
    assert_eq!(r.status, StatusCode::ACCEPTED);
    assert_eq!(r.json()["pending_segments"], 1);
    let r = c
        .post("/api/slides/case-001/strokes", json!({"tool": "boundary", "segments": [s2], "finish": true, "label": "gland"}))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.body));
    let made = r.json()["annotations"].as_array().unwrap().clone();
    assert_eq!(made.len(), 1, "a short pen lift is bridged");
    assert_eq!(made[0]["kind"], "polygon");
    assert_eq!(made[0]["coords"].as_array().unwrap().len(), 12);
    assert_eq!(made[0]["user_id"], "alice");
    let far = seg(&[(400.0, 400.0, 900.0), (450.0, 450.0, 950.0), (400.0, 450.0, 990.0)]);
    let s3 = seg(&[(100.0, 100.0, 0.0), (200.0, 100.0, 50.0), (200.0, 200.0, 100.0)]);
    let r = c
        .post("/api/slides/case-001/strokes", json!({"tool": "boundary", "segments": [s3, far], "finish": true}))
        .await;
    assert_eq!(r.json()["annotations"].as_array().unwrap().len(), 2, "a late pen lift starts a new region");
    let r = c
        .post("/api/slides/case-001/strokes", json!({"tool": "boundary", "segments": [], "finish": true}))
        .await;
    assert_eq!(r.error(400), "EmptyInput");
    let brush = seg(&[(300.0, 300.0, 0.0), (340.0, 300.0, 40.0)]);
    let r = c
        .post("/api/slides/case-001/strokes", json!({"tool": "brush_fill", "segments": [brush], "radius": 5, "label": "mask"}))
        .await;
    assert_eq!(r.status, StatusCode::OK);
    let mask = record(&r.json()["annotations"][0]);
    assert_eq!(mask.kind.as_str(), "mask");
    let area = mask.mask.as_ref().unwrap().area();
    let erase = seg(&[(320.0, 290.0, 0.0), (320.0, 310.0, 10.0)]);
    let r = c
        .post(
            "/api/slides/case-001/strokes",
            json!({"tool": "brush_erase", "segments": [erase.clone()], "radius": 2, "annotation_id": mask.id}),
        )
        .await;
    let erased = record(&r.json()["annotations"][0]);
    assert_eq!(erased.version, 2);
    assert!(erased.mask.as_ref().unwrap().area() < area);
    let r = c
        .json(
            Method::POST,
            "/api/slides/case-001/strokes",
            json!({"tool": "brush_erase", "segments": [erase.clone()], "annotation_id": mask.id}),
            &[("if-match", "1")],
        )
        .await;
    assert_eq!(r.error(409), "VersionConflict");
    let r = c.post("/api/slides/case-001/strokes", json!({"tool": "brush_erase", "segments": [erase]})).await;
    assert_eq!(r.error(400), "InvalidRequest");
    assert_eq!(c.post("/api/slides/case-001/strokes", json!({"tool": "lasso"})).await.error(400), "InvalidBody");
    routes += 1;

    // GET /api/analyzers
    let list = c.get("/api/analyzers").await.json();
    let mut names: Vec<&str> = list.as_array().unwrap().iter().map(|a| a["name"].as_str().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["foreground_otsu", "grid_classify", "nucleus_detect", "region_grow"]);
    routes += 1;

    // POST /api/tasks, GET /api/tasks/{id}, GET /api/tasks
    let r = c
        .post("/api/tasks", json!({"slide_id": "case-001", "analyzer": "grid_classify", "params": {"grid_size": 64}}))
        .await;
    assert_eq!(r.status, StatusCode::ACCEPTED, "{}", String::from_utf8_lossy(&r.body));
    let task_id = r.json()["id"].as_str().unwrap().to_owned();
    assert_eq!(r.header("location"), Some(format!("/api/tasks/{task_id}").as_str()));
    let fg = c.post("/api/tasks", json!({"slide_id": "case-001", "analyzer": "foreground_otsu"})).await.json();
    let done = wait_done(&c, &task_id).await;
    assert_eq!(done["status"], "done", "{done}");
    let result_ref = done["result_ref"].as_str().unwrap();
    assert!(dir.join("data").join(result_ref).join("meta.json").is_file());
    assert_eq!(wait_done(&c, fg["id"].as_str().unwrap()).await["status"], "done");
    let err = c.post("/api/tasks", json!({"slide_id": "case-001", "analyzer": "deep_magic"})).await.error(404);
    assert_eq!(err, "UnknownAnalyzer");
    let err = c.post("/api/tasks", json!({"slide_id": "nope", "analyzer": "foreground_otsu"})).await.error(404);
    assert_eq!(err, "UnknownSlide");
    let err = c
        .post("/api/tasks", json!({"slide_id": "case-001", "analyzer": "grid_classify", "params": {"grid_size": "x"}}))
        .await
        .error(400);
    assert_eq!(err, "BadParams");
    assert_eq!(c.get("/api/tasks/missing").await.error(404), "UnknownTask");
    let tasks = c.get("/api/tasks?slide_id=case-001").await.json();
    assert_eq!(tasks.as_array().unwrap().len(), 2);
    assert_eq!(c.get("/api/tasks?slide_id=nope").await.error(404), "UnknownSlide");
    let info = c.get("/api/slides/case-001").await.json();
    assert_eq!(info["tasks"]["done"], 2);
    routes += 3;

    // GET /api/slides/{id}/overlays/{task_id}/{level}/{col}_{row}.png
    let r = c.get(&format!("/api/slides/case-001/overlays/{task_id}/10/1_1.png")).await;
    assert_eq!(r.status, StatusCode::OK);
    let ov = decode_png(&r.body);
    assert_eq!(ov.color(), image::ColorType::Rgba8);
    assert_eq!((ov.width(), ov.height()), (256, 256));
    let r = c.get(&format!("/api/slides/case-001/overlays/{task_id}/10/3_2.png")).await;
    let ov = decode_png(&r.body);
    assert_eq!((ov.width(), ov.height()), (239, 93));
    let r = c.get(&format!("/api/slides/case-001/overlays/{task_id}/10/0_0.jpg")).await;
    assert_eq!(r.error(415), "UnsupportedFormat");
    let r = c.get("/api/slides/case-001/overlays/missing/10/0_0.png").await;
    assert_eq!(r.error(404), "UnknownTask");
    let r = c.get(&format!("/api/slides/case-001/overlays/{task_id}/10/9_0.png")).await;
    assert_eq!(r.error(404), "TileOutOfRange");
    routes += 1;

    // POST /api/slides/{id}/regiongrow
    let r = c.post("/api/slides/case-001/regiongrow", json!({"x": 5, "y": 5, "tolerance": 12, "label": "glass"})).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
    let grown = record(&r.json());
    assert_eq!(grown.kind.as_str(), "mask");
    assert!(grown.mask.as_ref().unwrap().contains(5, 5));
    let err = c.post("/api/slides/case-001/regiongrow", json!({"x": -1, "y": 0})).await.error(400);
    assert_eq!(err, "SeedOutOfBounds");
    assert_eq!(c.post("/api/slides/nope/regiongrow", json!({"x": 1, "y": 1})).await.error(404), "UnknownSlide");
    routes += 1;

    // POST/GET /api/slides/{id}/report and GET /api/reports
    let doc = "[patient]\nage: 63\nsex: F\n[diagnosis]\nprimary: Renal clear cell carcinoma\ngrade: 2\n";
    let r = c
        .send(
            Request::post("/api/slides/case-001/report?source=tcga_import")
                .header("content-type", "text/plain")
                .body(Body::from(doc))
                .unwrap(),
        )
        .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
    assert_eq!(r.json()["source"], "tcga_import");
    let anon_id = anon["slide_id"].as_str().unwrap().to_owned();
    let r = c
        .post(
            &format!("/api/slides/{anon_id}/report"),
            json!({"sections": [{"name": "diagnosis", "fields": [["primary", "Papillary adenoma"]]}], "source": "hospital_import"}),
        )
        .await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&r.body));
    let got = c.get("/api/slides/case-001/report").await.json();
    assert_eq!(got["sections"][1]["name"], "diagnosis");
    assert_eq!(got["sections"][0]["fields"][0], json!(["age", "63"]));
    let dup = c.post("/api/slides/case-001/report", json!({"document": "[a]\nx: 1\nx: 2\n"})).await;
    assert_eq!(dup.error(422), "MalformedDocument");
    assert_eq!(c.post("/api/slides/nope/report", json!({"document": "[a]\nx: 1\n"})).await.error(404), "UnknownSlide");
    assert_eq!(c.post("/api/slides/case-001/report", json!({})).await.error(400), "InvalidBody");
    let table = c.get("/api/reports?q=CARCINOMA&columns=primary").await.json();
    assert_eq!(
        table,
        json!({"columns": ["primary"], "rows": [{"slide_id": "case-001", "values": ["Renal clear cell carcinoma"]}]})
    );
    let table = c.get("/api/reports?columns=primary,age").await.json();
    assert_eq!(table["rows"].as_array().unwrap().len(), 2);
    let mut ids = vec!["case-001".to_owned(), anon_id.clone()];
    ids.sort();
    let got: Vec<String> = table["rows"].as_array().unwrap().iter().map(|r| r["slide_id"].as_str().unwrap().into()).collect();
    assert_eq!(got, ids);
    let table = c.get("/api/reports?q=63&section=diagnosis").await.json();
    assert_eq!(table["rows"], json!([]));
    routes += 2;

    // Idempotency-Key
    let before = platform.list_annotations("case-001", None).unwrap().len();
    let body = json!({"kind": "point", "coords": [10, 10], "label": "retry"});
    let hdr = [("x-user", "alice"), ("idempotency-key", "req-42")];
    let a = c.json(Method::POST, "/api/slides/case-001/annotations", body.clone(), &hdr).await;
    let b = c.json(Method::POST, "/api/slides/case-001/annotations", body.clone(), &hdr).await;
    assert_eq!(a.status, StatusCode::CREATED);
    assert_eq!((b.status, &b.body), (a.status, &a.body));
    assert_eq!(b.header("idempotent-replay"), Some("true"));
    assert_eq!(platform.list_annotations("case-001", None).unwrap().len(), before + 1);
    let other = c
        .json(Method::POST, "/api/slides/case-001/annotations", body, &[("x-user", "bob"), ("idempotency-key", "req-42")])
        .await;
    assert_ne!(other.body, a.body, "keys are scoped per user");

    // Unknown route
    assert_eq!(c.get("/api/nothing/here").await.error(404), "UnknownRoute");

    // Tile GETs are pure reads
    let checksum = platform.store().checksum().unwrap();
    let mut rng = common::rng(99);
    for _ in 0..10_000 {
        let level = rng.random_range(0..=11u32);
        let (col, row) = (rng.random_range(0..5u32), rng.random_range(0..4u32));
        let fmt = ["jpg", "png", "jpeg", "gif"][rng.random_range(0..4)];
        let r = c.get(&format!("/api/slides/case-001_files/{level}/{col}_{row}.{fmt}")).await;
        assert!(r.status == StatusCode::OK || r.status.is_client_error(), "{}", r.status);
    }
    assert_eq!(platform.store().checksum().unwrap(), checksum);

    routes
}
