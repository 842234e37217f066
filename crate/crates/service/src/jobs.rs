use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use foramslice_core::matcher::TimingReport;
use foramslice_core::MatchResult;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Match,
    Index,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedSlice {
    #[serde(flatten)]
    pub result: MatchResult,
    /// Base64 PNG of the matched slice in the matching frame.
    pub thumbnail_png: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchJobResult {
    pub results: Vec<MatchedSlice>,
    pub timing: TimingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<MatchJobResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Entry {
    handle: JobHandle,
    finished: Option<Instant>,
}

/// The job table. States only move forward and progress never decreases.
#[derive(Default)]
pub struct JobTable {
    jobs: Mutex<HashMap<String, Entry>>,
}

impl JobTable {
    /// Registers a queued job unless `limit` jobs are already pending.
    pub fn try_insert(&self, kind: JobKind, limit: usize) -> Option<JobHandle> {
        let mut jobs = self.jobs.lock().unwrap();
        let active = jobs.values().filter(|e| e.handle.state < JobState::Done).count();
        if active >= limit {
            return None;
        }
        let handle = JobHandle {
            job_id: uuid::Uuid::new_v4().to_string(),
            kind,
            state: JobState::Queued,
            progress: 0.0,
            result: None,
            error: None,
        };
        jobs.insert(
            handle.job_id.clone(),
            Entry {
                handle: handle.clone(),
                finished: None,
            },
        );
        Some(handle)
    }

    pub fn get(&self, id: &str) -> Option<JobHandle> {
        self.jobs.lock().unwrap().get(id).map(|e| e.handle.clone())
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut Entry)) {
        if let Some(e) = self.jobs.lock().unwrap().get_mut(id) {
            f(e);
        }
    }

    pub fn set_running(&self, id: &str) {
        self.update(id, |e| {
            if e.handle.state == JobState::Queued {
                e.handle.state = JobState::Running;
            }
        });
    }

    pub fn set_progress(&self, id: &str, p: f64) {
        self.update(id, |e| {
            if e.handle.state == JobState::Running && p > e.handle.progress {
                e.handle.progress = p.min(1.0);
            }
        });
    }

    pub fn finish(&self, id: &str, outcome: Result<MatchJobResult, String>) {
        self.update(id, |e| {
            if e.handle.state >= JobState::Done {
                return;
            }
            match outcome {
                Ok(r) => {
                    e.handle.state = JobState::Done;
                    e.handle.progress = 1.0;
                    e.handle.result = Some(r);
                }
                Err(msg) => {
                    e.handle.state = JobState::Failed;
                    e.handle.error = Some(msg);
                }
            }
            e.finished = Some(Instant::now());
        });
    }

    /// Drops finished jobs older than `ttl`; returns how many went.
    pub fn expire(&self, ttl: Duration) -> usize {
        let mut jobs = self.jobs.lock().unwrap();
        let before = jobs.len();
        jobs.retain(|_, e| e.finished.map_or(true, |t| t.elapsed() < ttl));
        before - jobs.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn states_and_progress_only_move_forward() {
        let t = JobTable::default();
        let h = t.try_insert(JobKind::Match, 4).unwrap();
        t.set_progress(&h.job_id, 0.5);
        assert_eq!(t.get(&h.job_id).unwrap().progress, 0.0);
        t.set_running(&h.job_id);
        t.set_progress(&h.job_id, 0.5);
        t.set_progress(&h.job_id, 0.25);
        assert_eq!(t.get(&h.job_id).unwrap().progress, 0.5);
        t.finish(&h.job_id, Err("boom".into()));
        t.set_running(&h.job_id);
        let got = t.get(&h.job_id).unwrap();
        assert_eq!(got.state, JobState::Failed);
        assert_eq!(t.expire(Duration::ZERO), 1);
        assert!(t.get(&h.job_id).is_none());
    }

    #[test]
    fn limit_counts_pending_jobs() {
        let t = JobTable::default();
        let a = t.try_insert(JobKind::Match, 1).unwrap();
        assert!(t.try_insert(JobKind::Match, 1).is_none());
        t.finish(&a.job_id, Err("x".into()));
        assert!(t.try_insert(JobKind::Match, 1).is_some());
    }
}
