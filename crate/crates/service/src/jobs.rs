//! Asynchronous acquisitions and their event logs.
//!
//! The acquisition thread only ever takes a short lock to append to a job's
//! log, so slow readers cannot stall it. Histogram snapshots are the only
//! events that may be dropped: at most [`SNAPSHOT_BACKLOG`] stay in the log
//! and older ones are discarded. Row, completion and failure events are kept
//! for the lifetime of the job.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::watch;

use crate::error::ErrorBody;

pub const SNAPSHOT_BACKLOG: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Scan,
    Hbt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Completed,
    Cancelled,
    Failed,
}

impl JobState {
    pub fn is_final(self) -> bool {
        self != JobState::Running
    }
}

/// One line of the event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub event: String,
    pub payload: Value,
}

impl Event {
    pub fn is_snapshot(&self) -> bool {
        self.event == "snapshot"
    }

    pub fn is_final(&self) -> bool {
        matches!(self.event.as_str(), "completed" | "cancelled" | "failed")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowUpdate {
    pub row: usize,
    pub counts: Vec<u64>,
}

#[derive(Debug, Default)]
struct Log {
    events: VecDeque<Event>,
    next_seq: u64,
    snapshots: usize,
    dropped: u64,
}

impl Log {
    fn push(&mut self, event: &str, payload: Value) -> u64 {
        if event == "snapshot" {
            if self.snapshots == SNAPSHOT_BACKLOG {
                let oldest = self.events.iter().position(Event::is_snapshot).expect("counted");
                self.events.remove(oldest);
                self.snapshots -= 1;
                self.dropped += 1;
            }
            self.snapshots += 1;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push_back(Event {
            seq,
            event: event.into(),
            payload,
        });
        seq
    }
}

#[derive(Debug)]
struct JobData {
    state: JobState,
    progress: f64,
    rows: Vec<RowUpdate>,
    snapshot: Option<Value>,
    result: Option<Value>,
    error: Option<ErrorBody>,
    log: Log,
}

#[derive(Debug)]
pub struct Job {
    pub id: String,
    pub session_id: String,
    pub kind: JobKind,
    pub created_at: String,
    cancel: AtomicBool,
    data: Mutex<JobData>,
    seq_tx: watch::Sender<u64>,
}

/// Polling view of a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub schema: String,
    pub id: String,
    pub session_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub created_at: String,
    /// Fraction done, 0 to 1.
    pub progress: f64,
    /// Rows with index ≥ the `since` query parameter.
    pub rows: Vec<RowUpdate>,
    pub rows_completed: usize,
    /// Latest histogram snapshot of an HBT run.
    pub snapshot: Option<Value>,
    pub result: Option<Value>,
    pub error: Option<ErrorBody>,
    /// Sequence number the next event will carry.
    pub next_seq: u64,
    pub dropped_snapshots: u64,
}

impl Job {
    pub fn new(id: String, session_id: String, kind: JobKind) -> Self {
        let (seq_tx, _) = watch::channel(0);
        Job {
            id,
            session_id,
            kind,
            created_at: chrono::Utc::now().to_rfc3339(),
            cancel: AtomicBool::new(false),
            data: Mutex::new(JobData {
                state: JobState::Running,
                progress: 0.0,
                rows: Vec::new(),
                snapshot: None,
                result: None,
                error: None,
                log: Log::default(),
            }),
            seq_tx,
        }
    }

    pub fn cancel_flag(&self) -> &AtomicBool {
        &self.cancel
    }

    pub fn request_cancel(&self) {
        self.cancel.store(true, Ordering::Relaxed);
    }

    fn update(&self, f: impl FnOnce(&mut JobData)) {
        let next = {
            let mut d = self.data.lock().expect("job lock");
            f(&mut d);
            d.log.next_seq
        };
        self.seq_tx.send_replace(next);
    }

    pub fn push_row(&self, row: usize, rows_total: usize, counts: Vec<u64>) {
        self.update(|d| {
            let update = RowUpdate { row, counts };
            d.progress = (row + 1) as f64 / rows_total.max(1) as f64;
            let mut payload = serde_json::to_value(&update).expect("plain data");
            payload["rows_total"] = rows_total.into();
            d.log.push("row", payload);
            d.rows.push(update);
        });
    }

    pub fn push_snapshot(&self, progress: f64, snapshot: Value) {
        self.update(|d| {
            d.progress = progress.clamp(0.0, 1.0);
            d.log.push("snapshot", snapshot.clone());
            d.snapshot = Some(snapshot);
        });
    }

    pub fn finish(&self, state: JobState, result: Value) {
        debug_assert!(matches!(state, JobState::Completed | JobState::Cancelled));
        self.update(|d| {
            if state == JobState::Completed {
                d.progress = 1.0;
            }
            d.state = state;
            let name = if state == JobState::Completed { "completed" } else { "cancelled" };
            d.log.push(name, result.clone());
            d.result = Some(result);
        });
    }

    pub fn fail(&self, error: ErrorBody) {
        self.update(|d| {
            d.state = JobState::Failed;
            d.log.push("failed", serde_json::to_value(&error).expect("plain data"));
            d.error = Some(error);
        });
    }

    pub fn state(&self) -> JobState {
        self.data.lock().expect("job lock").state
    }

    pub fn view(&self, since_row: usize) -> JobView {
        let d = self.data.lock().expect("job lock");
        JobView {
            schema: crate::API_SCHEMA.into(),
            id: self.id.clone(),
            session_id: self.session_id.clone(),
            kind: self.kind,
            state: d.state,
            created_at: self.created_at.clone(),
            progress: d.progress,
            rows: d.rows.iter().filter(|r| r.row >= since_row).cloned().collect(),
            rows_completed: d.rows.len(),
            snapshot: d.snapshot.clone(),
            result: d.result.clone(),
            error: d.error.clone(),
            next_seq: d.log.next_seq,
            dropped_snapshots: d.log.dropped,
        }
    }

    /// Retained events with `seq >= from`.
    pub fn events_since(&self, from: u64) -> Vec<Event> {
        let d = self.data.lock().expect("job lock");
        d.log.events.iter().filter(|e| e.seq >= from).cloned().collect()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.seq_tx.subscribe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn snapshots_are_bounded_but_rows_and_finals_are_not() {
        let job = Job::new("j".into(), "s".into(), JobKind::Hbt);
        for i in 0..50 {
            job.push_snapshot(i as f64 / 50.0, json!({ "i": i }));
        }
        job.push_row(0, 1, vec![1, 2]);
        job.finish(JobState::Completed, json!({ "done": true }));
        let events = job.events_since(0);
        assert_eq!(events.iter().filter(|e| e.is_snapshot()).count(), SNAPSHOT_BACKLOG);
        assert_eq!(events.iter().filter(|e| e.event == "row").count(), 1);
        assert!(events.last().unwrap().is_final());
        // newest snapshots survive, in order
        let kept: Vec<u64> = events.iter().filter(|e| e.is_snapshot()).map(|e| e.payload["i"].as_u64().unwrap()).collect();
        assert_eq!(kept, (42..50).collect::<Vec<_>>());
        assert!(events.windows(2).all(|w| w[0].seq < w[1].seq));
        let view = job.view(0);
        assert_eq!(view.dropped_snapshots, 42);
        assert_eq!(view.snapshot.unwrap()["i"], 49);
        assert_eq!(view.state, JobState::Completed);
        assert_eq!(view.progress, 1.0);
    }

    #[test]
    fn resume_skips_seen_events() {
        let job = Job::new("j".into(), "s".into(), JobKind::Scan);
        for r in 0..5 {
            job.push_row(r, 5, vec![r as u64]);
        }
        let tail = job.events_since(3);
        assert_eq!(tail.iter().map(|e| e.seq).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(job.view(3).rows.len(), 2);
        assert_eq!(*job.subscribe().borrow(), 5);
    }
}
