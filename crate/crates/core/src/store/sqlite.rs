use std::path::Path;

use parking_lot::Mutex;
use rusqlite::{params, Connection, ErrorCode, OptionalExtension, Row};

use super::{ReportSection, ReportSource, Repository, SlideRow, StoreError, StructuredReport};
use crate::analysis::{AnalysisTask, TaskStatus};
use crate::annotation::{AnnotationKind, AnnotationRecord, Edit, EditOp, LabelMask, Rgba};
use crate::geom::Point;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS slides (
    slide_id TEXT PRIMARY KEY,
    display_name TEXT NOT NULL,
    source_path TEXT NOT NULL,
    width INTEGER NOT NULL,
    height INTEGER NOT NULL,
    base_magnification REAL,
    mpp REAL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS annotations (
    id TEXT PRIMARY KEY,
    slide_id TEXT NOT NULL,
    user_id TEXT NOT NULL,
    kind TEXT NOT NULL,
    coords TEXT NOT NULL,
    label TEXT NOT NULL,
    color TEXT NOT NULL,
    version INTEGER NOT NULL,
    deleted INTEGER NOT NULL,
    created_at INTEGER NOT NULL,
    updated_at INTEGER NOT NULL,
    mask TEXT
);
CREATE INDEX IF NOT EXISTS annotations_slide ON annotations (slide_id);
CREATE TABLE IF NOT EXISTS annotation_edits (
    annotation_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    op TEXT NOT NULL,
    payload TEXT NOT NULL,
    user_id TEXT NOT NULL,
    at INTEGER NOT NULL,
    PRIMARY KEY (annotation_id, seq)
);
CREATE TABLE IF NOT EXISTS tasks (
    id TEXT PRIMARY KEY,
    slide_id TEXT NOT NULL,
    analyzer_name TEXT NOT NULL,
    params TEXT NOT NULL,
    status TEXT NOT NULL,
    submitted_at INTEGER NOT NULL,
    finished_at INTEGER,
    result_ref TEXT,
    error_message TEXT
);
CREATE TABLE IF NOT EXISTS reports (
    slide_id TEXT PRIMARY KEY,
    source TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS report_fields (
    slide_id TEXT NOT NULL,
    section_index INTEGER NOT NULL,
    section_name TEXT NOT NULL,
    field_index INTEGER NOT NULL,
    field_name TEXT NOT NULL,
    value_string TEXT NOT NULL,
    PRIMARY KEY (slide_id, section_index, field_index)
);
";

/// Embedded single-file backend.
pub struct SqliteRepository {
    conn: Mutex<Connection>,
}

impl SqliteRepository {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        Self::init(Connection::open(path)?)
    }

    pub fn in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.execute_batch("PRAGMA foreign_keys = ON;")?;
        conn.execute_batch(SCHEMA)?;
        Ok(SqliteRepository { conn: Mutex::new(conn) })
    }
}

fn is_unique_violation(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::ConstraintViolation)
}

fn corrupt(what: &str, detail: impl std::fmt::Display) -> rusqlite::Error {
    rusqlite::Error::FromSqlConversionFailure(
        0,
        rusqlite::types::Type::Text,
        format!("corrupt {what}: {detail}").into(),
    )
}

fn slide_row(r: &Row<'_>) -> rusqlite::Result<SlideRow> {
    Ok(SlideRow {
        slide_id: r.get(0)?,
        display_name: r.get(1)?,
        source_path: r.get(2)?,
        width: r.get(3)?,
        height: r.get(4)?,
        base_magnification: r.get(5)?,
        mpp: r.get(6)?,
        created_at: r.get(7)?,
    })
}

const SLIDE_COLS: &str = "slide_id, display_name, source_path, width, height, base_magnification, mpp, created_at";

fn coords_text(coords: &[Point]) -> String {
    let flat: Vec<f64> = coords.iter().flat_map(|p| [p.x, p.y]).collect();
    serde_json::to_string(&flat).expect("floats serialise")
}

fn parse_coords(text: &str) -> rusqlite::Result<Vec<Point>> {
    let flat: Vec<f64> = serde_json::from_str(text).map_err(|e| corrupt("coords", e))?;
    if !flat.len().is_multiple_of(2) {
        return Err(corrupt("coords", "odd length"));
    }
    Ok(flat.chunks(2).map(|c| Point::new(c[0], c[1])).collect())
}

fn annotation_row(r: &Row<'_>) -> rusqlite::Result<AnnotationRecord> {
    let kind: String = r.get(3)?;
    let color: String = r.get(6)?;
    let mask: Option<String> = r.get(11)?;
    Ok(AnnotationRecord {
        id: r.get(0)?,
        slide_id: r.get(1)?,
        user_id: r.get(2)?,
        kind: kind.parse::<AnnotationKind>().map_err(|e| corrupt("kind", e))?,
        coords: parse_coords(&r.get::<_, String>(4)?)?,
        label: r.get(5)?,
        color: color.parse::<Rgba>().map_err(|e| corrupt("color", e))?,
        version: r.get::<_, i64>(7)? as u64,
        deleted: r.get(8)?,
        created_at: r.get(9)?,
        updated_at: r.get(10)?,
        mask: mask
            .map(|m| LabelMask::from_text(&m).map_err(|e| corrupt("mask", e)))
            .transpose()?,
    })
}

const ANNOTATION_COLS: &str =
    "id, slide_id, user_id, kind, coords, label, color, version, deleted, created_at, updated_at, mask";

fn edit_row(r: &Row<'_>) -> rusqlite::Result<Edit> {
    let payload: String = r.get(1)?;
    let op: EditOp = serde_json::from_str(&payload).map_err(|e| corrupt("edit payload", e))?;
    Ok(Edit {
        seq: r.get::<_, i64>(0)? as u64,
        user_id: r.get(2)?,
        at: r.get(3)?,
        op,
    })
}

fn task_row(r: &Row<'_>) -> rusqlite::Result<AnalysisTask> {
    let params: String = r.get(3)?;
    let status: String = r.get(4)?;
    Ok(AnalysisTask {
        id: r.get(0)?,
        slide_id: r.get(1)?,
        analyzer_name: r.get(2)?,
        params: serde_json::from_str(&params).map_err(|e| corrupt("params", e))?,
        status: TaskStatus::parse(&status).ok_or_else(|| corrupt("status", &status))?,
        submitted_at: r.get(5)?,
        finished_at: r.get(6)?,
        result_ref: r.get(7)?,
        error_message: r.get(8)?,
    })
}

const TASK_COLS: &str =
    "id, slide_id, analyzer_name, params, status, submitted_at, finished_at, result_ref, error_message";

fn load_report(conn: &Connection, slide_id: &str, source: &str) -> rusqlite::Result<StructuredReport> {
    let mut stmt = conn.prepare_cached(
        "SELECT section_index, section_name, field_name, value_string FROM report_fields
         WHERE slide_id = ?1 ORDER BY section_index, field_index",
    )?;
    let mut sections: Vec<ReportSection> = Vec::new();
    let mut last: Option<i64> = None;
    let rows = stmt.query_map([slide_id], |r| {
        Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, String>(3)?))
    })?;
    for row in rows {
        let (si, name, k, v) = row?;
        if last != Some(si) {
            sections.push(ReportSection { name, fields: Vec::new() });
            last = Some(si);
        }
        sections.last_mut().expect("pushed above").fields.push((k, v));
    }
    Ok(StructuredReport {
        slide_id: slide_id.to_owned(),
        sections,
        source: ReportSource::parse(source).ok_or_else(|| corrupt("report source", source))?,
    })
}

impl Repository for SqliteRepository {
    fn insert_slide(&self, s: &SlideRow) -> Result<(), StoreError> {
        let conn = self.conn.lock();
        conn.execute(
            &format!("INSERT INTO slides ({SLIDE_COLS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)"),
            params![
                s.slide_id,
                s.display_name,
                s.source_path,
                s.width,
                s.height,
                s.base_magnification,
                s.mpp,
                s.created_at
            ],
        )
        .map_err(|e| {
            if is_unique_violation(&e) {
                StoreError::DuplicateSlideId(s.slide_id.clone())
            } else {
                e.into()
            }
        })?;
        Ok(())
    }

    fn get_slide(&self, slide_id: &str) -> Result<Option<SlideRow>, StoreError> {
        let conn = self.conn.lock();
        Ok(conn
            .query_row(
                &format!("SELECT {SLIDE_COLS} FROM slides WHERE slide_id = ?1"),
                [slide_id],
                slide_row,
            )
            .optional()?)
    }

    fn list_slides(&self) -> Result<Vec<SlideRow>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare(&format!("SELECT {SLIDE_COLS} FROM slides ORDER BY slide_id"))?;
        let rows = stmt.query_map([], slide_row)?.collect::<Result<_, _>>()?;
        Ok(rows)
    }

    fn update_slide(&self, s: &SlideRow) -> Result<(), StoreError> {
        let conn = self.conn.lock();
        let n = conn.execute(
            "UPDATE slides SET display_name = ?2, source_path = ?3, width = ?4, height = ?5,
             base_magnification = ?6, mpp = ?7 WHERE slide_id = ?1",
            params![s.slide_id, s.display_name, s.source_path, s.width, s.height, s.base_magnification, s.mpp],
        )?;
        if n == 0 {
            return Err(StoreError::UnknownSlide(s.slide_id.clone()));
        }
        Ok(())
    }

    fn delete_slide(&self, slide_id: &str) -> Result<(), StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        tx.execute(
            "DELETE FROM annotation_edits WHERE annotation_id IN (SELECT id FROM annotations WHERE slide_id = ?1)",
            [slide_id],
        )?;
        for table in ["annotations", "tasks", "reports", "report_fields", "slides"] {
            tx.execute(&format!("DELETE FROM {table} WHERE slide_id = ?1"), [slide_id])?;
        }
        tx.commit()?;
        Ok(())
    }

    fn append_edit(&self, a: &AnnotationRecord, edit: &Edit, expected_version: u64) -> Result<(), StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        let actual: u64 = tx
            .query_row("SELECT version FROM annotations WHERE id = ?1", [&a.id], |r| r.get::<_, i64>(0))
            .optional()?
            .map_or(0, |v| v as u64);
        if actual != expected_version {
            return Err(StoreError::VersionConflict {
                expected: expected_version,
                actual,
            });
        }
        tx.execute(
            &format!(
                "INSERT OR REPLACE INTO annotations ({ANNOTATION_COLS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11, ?12)"
            ),
            params![
                a.id,
                a.slide_id,
                a.user_id,
                a.kind.as_str(),
                coords_text(&a.coords),
                a.label,
                a.color.to_string(),
                a.version as i64,
                a.deleted,
                a.created_at,
                a.updated_at,
                a.mask.as_ref().map(LabelMask::to_text),
            ],
        )?;
        tx.execute(
            "INSERT INTO annotation_edits (annotation_id, seq, op, payload, user_id, at) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![
                a.id,
                edit.seq as i64,
                edit.op.name(),
                serde_json::to_string(&edit.op)?,
                edit.user_id,
                edit.at
            ],
        )?;
        tx.commit()?;
        Ok(())
    }

    fn get_annotation(&self, id: &str) -> Result<Option<AnnotationRecord>, StoreError> {
        let conn = self.conn.lock();
        Ok(conn
            .query_row(
                &format!("SELECT {ANNOTATION_COLS} FROM annotations WHERE id = ?1"),
                [id],
                annotation_row,
            )
            .optional()?)
    }

    fn list_annotations(&self, slide_id: &str) -> Result<Vec<AnnotationRecord>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare_cached(&format!(
            "SELECT {ANNOTATION_COLS} FROM annotations WHERE slide_id = ?1 ORDER BY created_at, id"
        ))?;
        let rows = stmt.query_map([slide_id], annotation_row)?.collect::<Result<_, _>>()?;
        Ok(rows)
    }

    fn edits(&self, annotation_id: &str) -> Result<Vec<Edit>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare_cached(
            "SELECT seq, payload, user_id, at FROM annotation_edits WHERE annotation_id = ?1 ORDER BY seq",
        )?;
        let rows = stmt.query_map([annotation_id], edit_row)?.collect::<Result<_, _>>()?;
        Ok(rows)
    }

    fn insert_task(&self, t: &AnalysisTask) -> Result<(), StoreError> {
        let conn = self.conn.lock();
        conn.execute(
            &format!("INSERT INTO tasks ({TASK_COLS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9)"),
            params![
                t.id,
                t.slide_id,
                t.analyzer_name,
                serde_json::to_string(&t.params)?,
                t.status.as_str(),
                t.submitted_at,
                t.finished_at,
                t.result_ref,
                t.error_message
            ],
        )?;
        Ok(())
    }

    fn update_task(&self, t: &AnalysisTask) -> Result<(), StoreError> {
        let conn = self.conn.lock();
        let n = conn.execute(
            "UPDATE tasks SET status = ?2, finished_at = ?3, result_ref = ?4, error_message = ?5 WHERE id = ?1",
            params![t.id, t.status.as_str(), t.finished_at, t.result_ref, t.error_message],
        )?;
        if n == 0 {
            return Err(StoreError::UnknownTask(t.id.clone()));
        }
        Ok(())
    }

    fn get_task(&self, id: &str) -> Result<Option<AnalysisTask>, StoreError> {
        let conn = self.conn.lock();
        Ok(conn
            .query_row(&format!("SELECT {TASK_COLS} FROM tasks WHERE id = ?1"), [id], task_row)
            .optional()?)
    }

    fn list_tasks(&self, slide_id: Option<&str>) -> Result<Vec<AnalysisTask>, StoreError> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare_cached(&format!(
            "SELECT {TASK_COLS} FROM tasks WHERE ?1 IS NULL OR slide_id = ?1 ORDER BY submitted_at, id"
        ))?;
        let rows = stmt.query_map([slide_id], task_row)?.collect::<Result<_, _>>()?;
        Ok(rows)
    }

    fn put_report(&self, report: &StructuredReport) -> Result<(), StoreError> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        tx.execute("DELETE FROM report_fields WHERE slide_id = ?1", [&report.slide_id])?;
        tx.execute(
            "INSERT OR REPLACE INTO reports (slide_id, source) VALUES (?1, ?2)",
            params![report.slide_id, report.source.as_str()],
        )?;
        {
            let mut stmt = tx.prepare_cached(
                "INSERT INTO report_fields (slide_id, section_index, section_name, field_index, field_name, value_string)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            )?;
            for (si, s) in report.sections.iter().enumerate() {
                for (fi, (k, v)) in s.fields.iter().enumerate() {
                    stmt.execute(params![report.slide_id, si as i64, s.name, fi as i64, k, v])?;
                }
            }
        }
        tx.commit()?;
        Ok(())
    }

    fn get_report(&self, slide_id: &str) -> Result<Option<StructuredReport>, StoreError> {
        let conn = self.conn.lock();
        let source: Option<String> = conn
            .query_row("SELECT source FROM reports WHERE slide_id = ?1", [slide_id], |r| r.get(0))
            .optional()?;
        Ok(match source {
            Some(s) => Some(load_report(&conn, slide_id, &s)?),
            None => None,
        })
    }

    fn list_reports(&self) -> Result<Vec<StructuredReport>, StoreError> {
        let conn = self.conn.lock();
        let heads: Vec<(String, String)> = conn
            .prepare("SELECT slide_id, source FROM reports ORDER BY slide_id")?
            .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))?
            .collect::<Result<_, _>>()?;
        let mut out = Vec::with_capacity(heads.len());
        for (id, source) in heads {
            out.push(load_report(&conn, &id, &source)?);
        }
        Ok(out)
    }
}
