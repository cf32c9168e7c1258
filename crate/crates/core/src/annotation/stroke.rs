use std::collections::HashMap;

use parking_lot::Mutex;

use super::gaps::StrokeSegment;

/// Identifies an in-progress stroke: one per slide, user and tool.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StrokeKey {
    pub slide_id: String,
    pub user_id: String,
    pub tool: String,
}

struct Pending {
    segments: Vec<StrokeSegment>,
    touched_at: i64,
}

/// Segments received for strokes that have not been finished yet. A
/// stroke finishes on an explicit request or once idle for longer than
/// the auto-finish timeout.
pub struct StrokeBuffer {
    pending: Mutex<HashMap<StrokeKey, Pending>>,
    auto_finish_ms: i64,
}

impl StrokeBuffer {
    pub fn new(auto_finish_ms: i64) -> Self {
        StrokeBuffer {
            pending: Mutex::new(HashMap::new()),
            auto_finish_ms,
        }
    }

    pub fn auto_finish_ms(&self) -> i64 {
        self.auto_finish_ms
    }

    pub fn append(&self, key: StrokeKey, segments: Vec<StrokeSegment>, now: i64) {
        let mut map = self.pending.lock();
        let p = map.entry(key).or_insert_with(|| Pending {
            segments: Vec::new(),
            touched_at: now,
        });
        p.segments.extend(segments);
        p.touched_at = now;
    }

    /// Remove and return everything buffered for `key`.
    pub fn take(&self, key: &StrokeKey) -> Vec<StrokeSegment> {
        self.pending.lock().remove(key).map(|p| p.segments).unwrap_or_default()
    }

    pub fn pending_count(&self, key: &StrokeKey) -> usize {
        self.pending.lock().get(key).map_or(0, |p| p.segments.len())
    }

    /// Remove strokes idle since before `now - auto_finish_ms`.
    pub fn take_expired(&self, now: i64) -> Vec<(StrokeKey, Vec<StrokeSegment>)> {
        if self.auto_finish_ms <= 0 {
            return Vec::new();
        }
        let mut map = self.pending.lock();
        let expired: Vec<StrokeKey> = map
            .iter()
            .filter(|(_, p)| now - p.touched_at > self.auto_finish_ms)
            .map(|(k, _)| k.clone())
            .collect();
        expired
            .into_iter()
            .filter_map(|k| map.remove(&k).map(|p| (k, p.segments)))
            .collect()
    }
}
