use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::reports::{parse_report_document, search_reports, ReportTable};
use super::{
    generate_slide_id, is_valid_slide_id, ReportSource, Repository, SlideRow, SqliteRepository, StoreError,
    StructuredReport,
};
use crate::analysis::{AnalysisTask, TaskStatus};
use crate::annotation::{self, replay, AnnotationRecord, Edit, EditOp, NewAnnotation, ReplayState};
use crate::geom::Rect;
use crate::slide_io::Slide;

pub const DATABASE_FILE: &str = "pimip.db";
pub(crate) const SLIDE_SUBDIRS: [&str; 3] = ["annotations", "results", "thumbs"];
const CAS_RETRIES: usize = 64;

/// Slide registry, annotation log, tasks and reports on top of a
/// [`Repository`], plus the per-slide folders under the data directory.
#[derive(Clone)]
pub struct Store {
    data_dir: PathBuf,
    repo: Arc<dyn Repository>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("data_dir", &self.data_dir).finish_non_exhaustive()
    }
}

impl Store {
    /// Open (creating if needed) the default SQLite-backed store.
    pub fn open(data_dir: &Path) -> Result<Store, StoreError> {
        fs::create_dir_all(data_dir.join("slides"))?;
        let repo = SqliteRepository::open(&data_dir.join(DATABASE_FILE))?;
        Ok(Store::with_repository(data_dir, Arc::new(repo)))
    }

    pub fn with_repository(data_dir: &Path, repo: Arc<dyn Repository>) -> Store {
        Store {
            data_dir: data_dir.to_path_buf(),
            repo,
        }
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn repository(&self) -> &Arc<dyn Repository> {
        &self.repo
    }

    pub fn slide_dir(&self, slide_id: &str) -> PathBuf {
        self.data_dir.join("slides").join(slide_id)
    }

    pub fn pyramid_dir(&self, slide_id: &str) -> PathBuf {
        self.slide_dir(slide_id).join("pyramid")
    }

    /// `slides/<id>/results/<task>`, relative to the data directory.
    pub fn result_ref(slide_id: &str, task_id: &str) -> String {
        format!("slides/{slide_id}/results/{task_id}")
    }

    pub fn resolve(&self, result_ref: &str) -> PathBuf {
        self.data_dir.join(result_ref)
    }

    // Slides

    /// Register a readable slide source under `name` or a generated id
    /// and create its folder.
    pub fn register_slide(&self, source: &Path, name: Option<&str>) -> Result<SlideRow, StoreError> {
        let slide = Slide::open(source).map_err(|e| StoreError::UnreadableSource {
            path: source.display().to_string(),
            source: e,
        })?;
        let d = slide.descriptor();
        let source_path = fs::canonicalize(source).unwrap_or_else(|_| source.to_path_buf());
        let display_name = match name {
            Some(n) => n.to_owned(),
            None => source
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        let mut row = SlideRow {
            slide_id: String::new(),
            display_name,
            source_path: source_path.display().to_string(),
            width: d.width,
            height: d.height,
            base_magnification: d.base_magnification,
            mpp: d.mpp,
            created_at: crate::now_millis(),
        };
        match name {
            Some(n) => {
                row.slide_id = n.to_owned();
                self.insert_slide(&row)?;
            }
            None => loop {
                row.slide_id = generate_slide_id();
                match self.insert_slide(&row) {
                    Err(StoreError::DuplicateSlideId(_)) => continue,
                    r => break r?,
                }
            },
        }
        Ok(row)
    }

    /// Insert a prepared row and create the slide folder.
    pub fn insert_slide(&self, row: &SlideRow) -> Result<(), StoreError> {
        if !is_valid_slide_id(&row.slide_id) {
            return Err(StoreError::InvalidSlideId(row.slide_id.clone()));
        }
        self.repo.insert_slide(row)?;
        if let Err(e) = self.make_slide_dir(&row.slide_id) {
            let _ = self.repo.delete_slide(&row.slide_id);
            return Err(e);
        }
        Ok(())
    }

    fn make_slide_dir(&self, slide_id: &str) -> Result<(), StoreError> {
        let dir = self.slide_dir(slide_id);
        if !dir.exists() {
            let staging = self
                .data_dir
                .join("slides")
                .join(format!(".{slide_id}.creating-{}", std::process::id()));
            for sub in SLIDE_SUBDIRS {
                fs::create_dir_all(staging.join(sub))?;
            }
            if let Err(e) = fs::rename(&staging, &dir) {
                let _ = fs::remove_dir_all(&staging);
                if !dir.exists() {
                    return Err(e.into());
                }
            }
        }
        for sub in SLIDE_SUBDIRS {
            fs::create_dir_all(dir.join(sub))?;
        }
        Ok(())
    }

    pub fn update_source_path(&self, slide_id: &str, source_path: &Path) -> Result<SlideRow, StoreError> {
        let mut row = self.slide(slide_id)?;
        row.source_path = source_path.display().to_string();
        self.repo.update_slide(&row)?;
        Ok(row)
    }

    /// Write a full edit log, checking each step against the replay.
    pub(crate) fn restore_log(&self, log: &[Edit]) -> Result<AnnotationRecord, StoreError> {
        let mut state: Option<ReplayState> = None;
        for (i, e) in log.iter().enumerate() {
            if e.seq != i as u64 + 1 {
                return Err(StoreError::MalformedBundle(format!("edit log gap at seq {}", e.seq)));
            }
            let next = ReplayState::apply(state, e)?;
            self.repo.append_edit(&next.record, e, i as u64)?;
            state = Some(next);
        }
        state
            .map(|s| s.record)
            .ok_or_else(|| StoreError::MalformedBundle("empty edit log".into()))
    }

    pub fn slide(&self, slide_id: &str) -> Result<SlideRow, StoreError> {
        self.repo
            .get_slide(slide_id)?
            .ok_or_else(|| StoreError::UnknownSlide(slide_id.to_owned()))
    }

    pub fn list_slides(&self) -> Result<Vec<SlideRow>, StoreError> {
        self.repo.list_slides()
    }

    /// Drop the slide's rows and folder.
    pub fn remove_slide(&self, slide_id: &str) -> Result<(), StoreError> {
        self.slide(slide_id)?;
        self.repo.delete_slide(slide_id)?;
        let dir = self.slide_dir(slide_id);
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        Ok(())
    }

    // Annotations

    fn dims(&self, slide_id: &str) -> Result<(u32, u32), StoreError> {
        let s = self.slide(slide_id)?;
        Ok((s.width, s.height))
    }

    pub fn create_annotation(&self, slide_id: &str, user_id: &str, new: NewAnnotation) -> Result<AnnotationRecord, StoreError> {
        let dims = self.dims(slide_id)?;
        let rec = new.into_record(slide_id, user_id, dims)?;
        self.insert_annotation(rec)
    }

    /// Store a freshly built record as the first entry of its log.
    pub fn insert_annotation(&self, mut rec: AnnotationRecord) -> Result<AnnotationRecord, StoreError> {
        let dims = self.dims(&rec.slide_id)?;
        rec.version = 1;
        rec.deleted = false;
        rec.validate(dims)?;
        let edit = Edit {
            seq: 1,
            user_id: rec.user_id.clone(),
            at: rec.created_at,
            op: EditOp::Create { record: rec.clone() },
        };
        let state = ReplayState::apply(None, &edit)?;
        self.repo.append_edit(&state.record, &edit, 0)?;
        Ok(state.record)
    }

    /// Apply `op` on top of the stored state. With `expected_version`
    /// the write fails on a mismatch; without it the edit is retried
    /// against the newest version.
    pub fn edit_annotation(
        &self,
        id: &str,
        user_id: &str,
        op: EditOp,
        expected_version: Option<u64>,
    ) -> Result<AnnotationRecord, StoreError> {
        for _ in 0..CAS_RETRIES {
            let log = self.repo.edits(id)?;
            if log.is_empty() {
                return Err(StoreError::UnknownAnnotation(id.to_owned()));
            }
            let state = replay(&log)?;
            let current = state.record.version;
            if let Some(expected) = expected_version {
                if expected != current {
                    return Err(StoreError::VersionConflict {
                        expected,
                        actual: current,
                    });
                }
            }
            let dims = self.dims(&state.record.slide_id)?;
            let op = with_clip(op.clone(), dims);
            let edit = Edit {
                seq: current + 1,
                user_id: user_id.to_owned(),
                at: crate::now_millis(),
                op,
            };
            let next = ReplayState::apply(Some(state), &edit)?;
            if next.record.is_live() {
                next.record.validate(dims)?;
            }
            match self.repo.append_edit(&next.record, &edit, current) {
                Ok(()) => return Ok(next.record),
                Err(StoreError::VersionConflict { .. }) if expected_version.is_none() => continue,
                Err(e) => return Err(e),
            }
        }
        Err(StoreError::Backend(format!("annotation `{id}` is too contended")))
    }

    /// Replace coordinates, label and colour, bumping the version.
    pub fn put_annotation(
        &self,
        rec: &AnnotationRecord,
        expected_version: u64,
        user_id: &str,
    ) -> Result<AnnotationRecord, StoreError> {
        let op = EditOp::UpdateCoords {
            coords: rec.coords.clone(),
            label: Some(rec.label.clone()),
            color: Some(rec.color),
        };
        self.edit_annotation(&rec.id, user_id, op, Some(expected_version))
    }

    pub fn undo(&self, id: &str, user_id: &str, expected_version: Option<u64>) -> Result<AnnotationRecord, StoreError> {
        self.edit_annotation(id, user_id, EditOp::Undo, expected_version)
    }

    pub fn clear(&self, id: &str, user_id: &str, expected_version: Option<u64>) -> Result<AnnotationRecord, StoreError> {
        self.edit_annotation(id, user_id, EditOp::Clear, expected_version)
    }

    pub fn annotation(&self, id: &str) -> Result<AnnotationRecord, StoreError> {
        self.repo
            .get_annotation(id)?
            .ok_or_else(|| StoreError::UnknownAnnotation(id.to_owned()))
    }

    /// Live annotations of a slide, optionally limited to a viewport.
    pub fn list_annotations(&self, slide_id: &str, bbox: Option<Rect>) -> Result<Vec<AnnotationRecord>, StoreError> {
        self.slide(slide_id)?;
        let all = self.repo.list_annotations(slide_id)?;
        Ok(match bbox {
            Some(r) => annotation::query_viewport(&all, r),
            None => all.into_iter().filter(AnnotationRecord::is_live).collect(),
        })
    }

    pub fn edits(&self, id: &str) -> Result<Vec<Edit>, StoreError> {
        self.annotation(id)?;
        self.repo.edits(id)
    }

    // Tasks

    pub fn create_task(&self, task: &AnalysisTask) -> Result<(), StoreError> {
        self.slide(&task.slide_id)?;
        self.repo.insert_task(task)
    }

    pub fn task(&self, id: &str) -> Result<AnalysisTask, StoreError> {
        self.repo.get_task(id)?.ok_or_else(|| StoreError::UnknownTask(id.to_owned()))
    }

    pub fn list_tasks(&self, slide_id: Option<&str>) -> Result<Vec<AnalysisTask>, StoreError> {
        self.repo.list_tasks(slide_id)
    }

    /// Move a task along pending → running → {done, failed}. A done
    /// task must carry a result reference.
    pub fn transition_task(
        &self,
        id: &str,
        to: TaskStatus,
        result_ref: Option<String>,
        error_message: Option<String>,
    ) -> Result<AnalysisTask, StoreError> {
        let mut t = self.task(id)?;
        if !t.status.can_become(to) || (to == TaskStatus::Done) != result_ref.is_some() {
            return Err(StoreError::InvalidTransition {
                id: id.to_owned(),
                from: t.status.as_str(),
                to: to.as_str(),
            });
        }
        t.status = to;
        if to.is_terminal() {
            t.finished_at = Some(crate::now_millis());
        }
        t.result_ref = result_ref;
        t.error_message = error_message;
        self.repo.update_task(&t)?;
        Ok(t)
    }

    // Reports

    pub fn import_report(&self, slide_id: &str, document: &str, source: ReportSource) -> Result<StructuredReport, StoreError> {
        self.slide(slide_id)?;
        let report = parse_report_document(slide_id, document, source)?;
        self.repo.put_report(&report)?;
        Ok(report)
    }

    pub fn put_report(&self, report: &StructuredReport) -> Result<(), StoreError> {
        self.slide(&report.slide_id)?;
        report.check()?;
        self.repo.put_report(report)
    }

    pub fn report(&self, slide_id: &str) -> Result<Option<StructuredReport>, StoreError> {
        self.repo.get_report(slide_id)
    }

    pub fn search_reports(&self, query: &str, columns: &[String], section: Option<&str>) -> Result<ReportTable, StoreError> {
        Ok(search_reports(&self.repo.list_reports()?, query, columns, section))
    }

    /// Digest of everything in the repository, for detecting writes.
    pub fn checksum(&self) -> Result<String, StoreError> {
        let mut h = Sha256::new();
        for s in self.repo.list_slides()? {
            h.update(serde_json::to_vec(&s)?);
            for a in self.repo.list_annotations(&s.slide_id)? {
                h.update(serde_json::to_vec(&a)?);
                h.update(serde_json::to_vec(&self.repo.edits(&a.id)?)?);
            }
            h.update(serde_json::to_vec(&self.repo.list_tasks(Some(&s.slide_id))?)?);
            h.update(serde_json::to_vec(&self.repo.get_report(&s.slide_id)?)?);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn with_clip(op: EditOp, (w, h): (u32, u32)) -> EditOp {
    let slide = Some(Rect::new(0, 0, w as i64, h as i64));
    match op {
        EditOp::MaskFill { brush, radius, clip: None } => EditOp::MaskFill { brush, radius, clip: slide },
        EditOp::MaskErase { brush, radius, clip: None } => EditOp::MaskErase { brush, radius, clip: slide },
        other => other,
    }
}
