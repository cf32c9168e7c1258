use serde::{Deserialize, Serialize};

use super::registry::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl TaskStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskStatus::Pending => "pending",
            TaskStatus::Running => "running",
            TaskStatus::Done => "done",
            TaskStatus::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<TaskStatus> {
        Some(match s {
            "pending" => TaskStatus::Pending,
            "running" => TaskStatus::Running,
            "done" => TaskStatus::Done,
            "failed" => TaskStatus::Failed,
            _ => return None,
        })
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskStatus::Done | TaskStatus::Failed)
    }

    /// pending → running → {done, failed}.
    pub fn can_become(&self, next: TaskStatus) -> bool {
        matches!(
            (self, next),
            (TaskStatus::Pending, TaskStatus::Running)
                | (TaskStatus::Running, TaskStatus::Done)
                | (TaskStatus::Running, TaskStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisTask {
    pub id: String,
    pub slide_id: String,
    pub analyzer_name: String,
    pub params: Params,
    pub status: TaskStatus,
    pub submitted_at: i64,
    pub finished_at: Option<i64>,
    /// Artifact directory relative to the data directory; set iff done.
    pub result_ref: Option<String>,
    pub error_message: Option<String>,
}

impl AnalysisTask {
    pub fn new(id: String, slide_id: &str, analyzer_name: &str, params: Params) -> Self {
        AnalysisTask {
            id,
            slide_id: slide_id.to_owned(),
            analyzer_name: analyzer_name.to_owned(),
            params,
            status: TaskStatus::Pending,
            submitted_at: crate::now_millis(),
            finished_at: None,
            result_ref: None,
            error_message: None,
        }
    }
}
