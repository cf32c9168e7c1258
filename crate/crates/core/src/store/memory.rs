use std::collections::{BTreeMap, HashMap};

use parking_lot::RwLock;

use super::{Repository, SlideRow, StoreError, StructuredReport};
use crate::analysis::AnalysisTask;
use crate::annotation::{AnnotationRecord, Edit};

#[derive(Default)]
struct Tables {
    slides: BTreeMap<String, SlideRow>,
    annotations: HashMap<String, AnnotationRecord>,
    edits: HashMap<String, Vec<Edit>>,
    tasks: HashMap<String, AnalysisTask>,
    reports: BTreeMap<String, StructuredReport>,
}

/// Volatile backend for tests and throwaway instances.
#[derive(Default)]
pub struct MemoryRepository {
    t: RwLock<Tables>,
}

impl MemoryRepository {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Repository for MemoryRepository {
    fn insert_slide(&self, row: &SlideRow) -> Result<(), StoreError> {
        let mut t = self.t.write();
        if t.slides.contains_key(&row.slide_id) {
            return Err(StoreError::DuplicateSlideId(row.slide_id.clone()));
        }
        t.slides.insert(row.slide_id.clone(), row.clone());
        Ok(())
    }

    fn get_slide(&self, slide_id: &str) -> Result<Option<SlideRow>, StoreError> {
        Ok(self.t.read().slides.get(slide_id).cloned())
    }

    fn list_slides(&self) -> Result<Vec<SlideRow>, StoreError> {
        Ok(self.t.read().slides.values().cloned().collect())
    }

    fn update_slide(&self, row: &SlideRow) -> Result<(), StoreError> {
        match self.t.write().slides.get_mut(&row.slide_id) {
            Some(slot) => {
                *slot = row.clone();
                Ok(())
            }
            None => Err(StoreError::UnknownSlide(row.slide_id.clone())),
        }
    }

    fn delete_slide(&self, slide_id: &str) -> Result<(), StoreError> {
        let mut t = self.t.write();
        t.slides.remove(slide_id);
        let ids: Vec<String> = t
            .annotations
            .values()
            .filter(|a| a.slide_id == slide_id)
            .map(|a| a.id.clone())
            .collect();
        for id in ids {
            t.annotations.remove(&id);
            t.edits.remove(&id);
        }
        t.tasks.retain(|_, task| task.slide_id != slide_id);
        t.reports.remove(slide_id);
        Ok(())
    }

    fn append_edit(&self, record: &AnnotationRecord, edit: &Edit, expected_version: u64) -> Result<(), StoreError> {
        let mut t = self.t.write();
        let actual = t.annotations.get(&record.id).map_or(0, |a| a.version);
        if actual != expected_version {
            return Err(StoreError::VersionConflict {
                expected: expected_version,
                actual,
            });
        }
        t.annotations.insert(record.id.clone(), record.clone());
        t.edits.entry(record.id.clone()).or_default().push(edit.clone());
        Ok(())
    }

    fn get_annotation(&self, id: &str) -> Result<Option<AnnotationRecord>, StoreError> {
        Ok(self.t.read().annotations.get(id).cloned())
    }

    fn list_annotations(&self, slide_id: &str) -> Result<Vec<AnnotationRecord>, StoreError> {
        let mut out: Vec<AnnotationRecord> = self
            .t
            .read()
            .annotations
            .values()
            .filter(|a| a.slide_id == slide_id)
            .cloned()
            .collect();
        out.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        Ok(out)
    }

    fn edits(&self, annotation_id: &str) -> Result<Vec<Edit>, StoreError> {
        Ok(self.t.read().edits.get(annotation_id).cloned().unwrap_or_default())
    }

    fn insert_task(&self, task: &AnalysisTask) -> Result<(), StoreError> {
        let mut t = self.t.write();
        if t.tasks.contains_key(&task.id) {
            return Err(StoreError::Backend(format!("task `{}` exists", task.id)));
        }
        t.tasks.insert(task.id.clone(), task.clone());
        Ok(())
    }

    fn update_task(&self, task: &AnalysisTask) -> Result<(), StoreError> {
        let mut t = self.t.write();
        match t.tasks.get_mut(&task.id) {
            Some(slot) => {
                *slot = task.clone();
                Ok(())
            }
            None => Err(StoreError::UnknownTask(task.id.clone())),
        }
    }

    fn get_task(&self, id: &str) -> Result<Option<AnalysisTask>, StoreError> {
        Ok(self.t.read().tasks.get(id).cloned())
    }

    fn list_tasks(&self, slide_id: Option<&str>) -> Result<Vec<AnalysisTask>, StoreError> {
        let mut out: Vec<AnalysisTask> = self
            .t
            .read()
            .tasks
            .values()
            .filter(|t| slide_id.is_none_or(|s| t.slide_id == s))
            .cloned()
            .collect();
        out.sort_by(|a, b| (a.submitted_at, &a.id).cmp(&(b.submitted_at, &b.id)));
        Ok(out)
    }

    fn put_report(&self, report: &StructuredReport) -> Result<(), StoreError> {
        self.t.write().reports.insert(report.slide_id.clone(), report.clone());
        Ok(())
    }

    fn get_report(&self, slide_id: &str) -> Result<Option<StructuredReport>, StoreError> {
        Ok(self.t.read().reports.get(slide_id).cloned())
    }

    fn list_reports(&self) -> Result<Vec<StructuredReport>, StoreError> {
        Ok(self.t.read().reports.values().cloned().collect())
    }
}
