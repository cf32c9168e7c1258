//! Analyzer registry, the built-in classical analyzers and the worker
//! pool that runs analysis tasks in the background.

mod artifacts;
mod builtins;
mod classify;
mod components;
mod foreground;
mod nuclei;
mod otsu;
mod overlay;
mod pool;
mod region_grow;
mod registry;
mod task;

pub use artifacts::{read_artifact, write_artifacts, ResultArtifact, RESULT_META_FILE};
pub use classify::{classify_regions, CellClassifier, GridLabels, MeanColorClassifier};
pub use components::{connected_components, Component, Components};
pub use foreground::{foreground_mask, saturation};
pub use nuclei::{detect_nuclei, NucleusParams, ThresholdMode};
pub use otsu::{histogram, otsu_threshold};
pub use overlay::{default_palette, render_overlay, OVERLAY_ALPHA};
pub use pool::WorkerPool;
pub use region_grow::region_grow;
pub use registry::{
    AnalysisContext, AnalysisOutput, Analyzer, AnalyzerDescriptor, AnalyzerRegistry, InputKind, OutputKind,
    ParamKind, ParamSpec, Params,
};
pub use task::{AnalysisTask, TaskStatus};

use crate::slide_io::SlideError;
use crate::tiler::TilerError;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("analyzer `{0}` is already registered")]
    DuplicateName(String),
    #[error("unknown analyzer `{0}`")]
    UnknownAnalyzer(String),
    #[error("unknown classifier `{0}`")]
    UnknownClassifier(String),
    #[error("unknown slide `{0}`")]
    UnknownSlide(String),
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("seed ({x}, {y}) outside the region")]
    SeedOutOfBounds { x: i64, y: i64 },
    #[error("no result artifact for task `{0}`")]
    MissingResult(String),
    #[error("analyzer failed: {0}")]
    Failed(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Slide(#[from] SlideError),
    #[error(transparent)]
    Tiler(#[from] TilerError),
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalysisError::DuplicateName(_) => "DuplicateName",
            AnalysisError::UnknownAnalyzer(_) => "UnknownAnalyzer",
            AnalysisError::UnknownClassifier(_) => "UnknownClassifier",
            AnalysisError::UnknownSlide(_) => "UnknownSlide",
            AnalysisError::BadParams(_) => "BadParams",
            AnalysisError::SeedOutOfBounds { .. } => "SeedOutOfBounds",
            AnalysisError::MissingResult(_) => "MissingResult",
            AnalysisError::Failed(_) => "AnalyzerFailed",
            AnalysisError::Io(_) => "IoFailure",
            AnalysisError::Slide(e) => e.code(),
            AnalysisError::Tiler(e) => e.code(),
        }
    }
}
