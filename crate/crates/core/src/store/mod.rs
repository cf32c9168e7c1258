mod bundle;
mod memory;
mod reports;
mod service;
mod sqlite;

use serde::{Deserialize, Serialize};

pub use bundle::BUNDLE_FORMAT;
pub use memory::MemoryRepository;
pub use reports::{parse_report_document, parse_report_table, search_reports, ReportRow, ReportTable};
pub use service::Store;
pub use sqlite::SqliteRepository;

use crate::analysis::AnalysisTask;
use crate::annotation::{AnnotationError, AnnotationRecord, Edit};
use crate::slide_io::SlideError;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("slide id `{0}` is already taken")]
    DuplicateSlideId(String),
    #[error("invalid slide id `{0}` (expected 1-64 of A-Z a-z 0-9 . _ -)")]
    InvalidSlideId(String),
    #[error("cannot read slide source {path}: {source}")]
    UnreadableSource { path: String, source: SlideError },
    #[error("unknown slide `{0}`")]
    UnknownSlide(String),
    #[error("unknown annotation `{0}`")]
    UnknownAnnotation(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("version conflict: expected {expected}, stored {actual}")]
    VersionConflict { expected: u64, actual: u64 },
    #[error("task `{id}` cannot move from {from} to {to}")]
    InvalidTransition { id: String, from: &'static str, to: &'static str },
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("storage backend failure: {0}")]
    Backend(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::DuplicateSlideId(_) => "DuplicateSlideId",
            StoreError::InvalidSlideId(_) => "InvalidSlideId",
            StoreError::UnreadableSource { .. } => "UnreadableSource",
            StoreError::UnknownSlide(_) => "UnknownSlide",
            StoreError::UnknownAnnotation(_) => "UnknownAnnotation",
            StoreError::UnknownTask(_) => "UnknownTask",
            StoreError::VersionConflict { .. } => "VersionConflict",
            StoreError::InvalidTransition { .. } => "InvalidTransition",
            StoreError::MalformedDocument(_) => "MalformedDocument",
            StoreError::MalformedBundle(_) => "MalformedBundle",
            StoreError::Annotation(e) => e.code(),
            StoreError::Backend(_) => "BackendFailure",
            StoreError::Io(_) => "IoFailure",
        }
    }
}

impl From<rusqlite::Error> for StoreError {
    fn from(e: rusqlite::Error) -> Self {
        StoreError::Backend(e.to_string())
    }
}

impl From<serde_json::Error> for StoreError {
    fn from(e: serde_json::Error) -> Self {
        StoreError::Backend(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRow {
    pub slide_id: String,
    pub display_name: String,
    pub source_path: String,
    pub width: u32,
    pub height: u32,
    pub base_magnification: Option<f64>,
    pub mpp: Option<f64>,
    pub created_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReportSource {
    TcgaImport,
    #[default]
    Manual,
    HospitalImport,
}

impl ReportSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReportSource::TcgaImport => "tcga_import",
            ReportSource::Manual => "manual",
            ReportSource::HospitalImport => "hospital_import",
        }
    }

    pub fn parse(s: &str) -> Option<ReportSource> {
        Some(match s {
            "tcga_import" => ReportSource::TcgaImport,
            "manual" => ReportSource::Manual,
            "hospital_import" => ReportSource::HospitalImport,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSection {
    pub name: String,
    pub fields: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredReport {
    pub slide_id: String,
    pub sections: Vec<ReportSection>,
    pub source: ReportSource,
}

impl StructuredReport {
    /// First value of `field`, optionally restricted to one section.
    /// `section.field` is also accepted.
    pub fn field(&self, name: &str, section: Option<&str>) -> Option<&str> {
        let (sec, field) = match (section, name.split_once('.')) {
            (Some(s), _) => (Some(s), name),
            (None, Some((s, f))) if self.sections.iter().any(|x| x.name == s) => (Some(s), f),
            _ => (None, name),
        };
        self.sections
            .iter()
            .filter(|s| sec.is_none_or(|n| s.name == n))
            .flat_map(|s| s.fields.iter())
            .find(|(k, _)| k == field)
            .map(|(_, v)| v.as_str())
    }

    pub(crate) fn check(&self) -> Result<(), StoreError> {
        for s in &self.sections {
            let mut seen = std::collections::HashSet::new();
            for (k, _) in &s.fields {
                if !seen.insert(k.as_str()) {
                    return Err(StoreError::MalformedDocument(format!(
                        "field `{k}` repeated in section `{}`",
                        s.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Persistence backend. Implementations must be safe for concurrent use;
/// `append_edit` is the only annotation write and is a compare-and-swap
/// on the stored version.
pub trait Repository: Send + Sync {
    fn insert_slide(&self, row: &SlideRow) -> Result<(), StoreError>;
    fn get_slide(&self, slide_id: &str) -> Result<Option<SlideRow>, StoreError>;
    fn list_slides(&self) -> Result<Vec<SlideRow>, StoreError>;
    fn update_slide(&self, row: &SlideRow) -> Result<(), StoreError>;
    fn delete_slide(&self, slide_id: &str) -> Result<(), StoreError>;

    /// Store `edit` and the materialised `record` if the current version
    /// equals `expected_version` (0 for a create).
    fn append_edit(&self, record: &AnnotationRecord, edit: &Edit, expected_version: u64) -> Result<(), StoreError>;
    fn get_annotation(&self, id: &str) -> Result<Option<AnnotationRecord>, StoreError>;
    /// All records of a slide including deleted ones, ordered by
    /// creation time then id.
    fn list_annotations(&self, slide_id: &str) -> Result<Vec<AnnotationRecord>, StoreError>;
    fn edits(&self, annotation_id: &str) -> Result<Vec<Edit>, StoreError>;

    fn insert_task(&self, task: &AnalysisTask) -> Result<(), StoreError>;
    fn update_task(&self, task: &AnalysisTask) -> Result<(), StoreError>;
    fn get_task(&self, id: &str) -> Result<Option<AnalysisTask>, StoreError>;
    /// Ordered by submission time then id.
    fn list_tasks(&self, slide_id: Option<&str>) -> Result<Vec<AnalysisTask>, StoreError>;

    /// Replace any prior report for the slide.
    fn put_report(&self, report: &StructuredReport) -> Result<(), StoreError>;
    fn get_report(&self, slide_id: &str) -> Result<Option<StructuredReport>, StoreError>;
    /// Ordered by slide id.
    fn list_reports(&self) -> Result<Vec<StructuredReport>, StoreError>;
}

const MAX_ID_LEN: usize = 64;

pub fn is_valid_slide_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= MAX_ID_LEN
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
        && id != "."
        && id != ".."
}

/// 16 lowercase hex digits from a random UUID.
pub fn generate_slide_id() -> String {
    let u = uuid::Uuid::new_v4().simple().to_string();
    u[..16].to_owned()
}
