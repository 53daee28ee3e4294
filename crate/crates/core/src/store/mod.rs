//! Durable run storage: one append-only JSONL log per run plus an index of run records.
//!
//! Each log line is the event's JSON with an extra `sum` field chaining a SHA-256
//! over the previous line's sum and this line's content, so edits to persisted
//! lines are detected on load.

mod render;

pub use render::{render_report, ReportFormat};

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::{Event, Limits, RunId, RunState, RunStatus};
use crate::provider::ProviderSelector;

const GENESIS_SUM: &str = "";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Sim,
    Live,
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sim" => Ok(RunMode::Sim),
            "live" => Ok(RunMode::Live),
            other => Err(format!("unknown mode `{other}` (expected sim or live)")),
        }
    }
}

/// Everything needed to list a run and to resume it from its log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: RunId,
    pub created_at: DateTime<Utc>,
    pub goal: String,
    pub target: String,
    pub mode: RunMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    pub limits: Limits,
    pub provider: ProviderSelector,
    pub policy_name: String,
    /// The policy as it was when the run started.
    pub policy_source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_approve: Option<String>,
    pub status: RunStatus,
    pub event_count: u64,
}

impl RunRecord {
    pub fn final_status(&self) -> Option<RunStatus> {
        self.status.is_terminal().then_some(self.status)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run {0} not found")]
    NotFound(RunId),
    #[error("run {0} already exists")]
    AlreadyExists(RunId),
    #[error("event seq {found} conflicts with log (expected {expected})")]
    SeqConflict { expected: u64, found: u64 },
    #[error("corrupt log for run {run_id} at seq {seq}: {reason}")]
    CorruptLog { run_id: RunId, seq: u64, reason: String },
    #[error("corrupt run index at line {line}: {reason}")]
    CorruptIndex { line: usize, reason: String },
    #[error("replay failed: {0}")]
    Replay(#[from] crate::graph::ReplayError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn chain_sum(prev: &str, content: &str) -> String {
    let mut h = Sha256::new();
    h.update(prev.as_bytes());
    h.update(b"\n");
    h.update(content.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
struct Tail {
    seq: u64,
    sum: String,
}

/// File-backed store rooted at a data directory.
#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
    tails: Mutex<HashMap<RunId, Tail>>,
    index_lock: Mutex<()>,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in [root.join("runs"), root.join("reports")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self {
            root,
            tails: Mutex::new(HashMap::new()),
            index_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self, run_id: &RunId) -> PathBuf {
        self.root.join("runs").join(format!("{run_id}.jsonl"))
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("runs").join("index.jsonl")
    }

    pub fn report_path(&self, run_id: &RunId, format: ReportFormat) -> PathBuf {
        self.root
            .join("reports")
            .join(format!("{run_id}.{}", format.extension()))
    }

    fn read_index(&self) -> Result<Vec<RunRecord>, StoreError> {
        let path = self.index_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| StoreError::CorruptIndex {
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect()
    }

    /// Rewrites the index through a temporary file and an atomic rename.
    fn write_index(&self, records: &[RunRecord]) -> Result<(), StoreError> {
        let path = self.index_path();
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            for r in records {
                let line = serde_json::to_string(r).expect("records serialize");
                writeln!(f, "{line}").map_err(io_err(&tmp))?;
            }
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn create_run(&self, record: &RunRecord) -> Result<(), StoreError> {
        let _guard = self.index_lock.lock().expect("index lock");
        let mut records = self.read_index()?;
        if records.iter().any(|r| r.run_id == record.run_id) {
            return Err(StoreError::AlreadyExists(record.run_id.clone()));
        }
        let log = self.log_path(&record.run_id);
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .map_err(io_err(&log))?;
        records.push(record.clone());
        self.write_index(&records)
    }

    /// Replaces the stored record with the same run id.
    pub fn update_run(&self, record: &RunRecord) -> Result<(), StoreError> {
        let _guard = self.index_lock.lock().expect("index lock");
        let mut records = self.read_index()?;
        let slot = records
            .iter_mut()
            .find(|r| r.run_id == record.run_id)
            .ok_or_else(|| StoreError::NotFound(record.run_id.clone()))?;
        *slot = record.clone();
        self.write_index(&records)
    }

    /// Records sorted by creation time, oldest first.
    pub fn list_runs(&self) -> Result<Vec<RunRecord>, StoreError> {
        let _guard = self.index_lock.lock().expect("index lock");
        let mut records = self.read_index()?;
        records.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.run_id.cmp(&b.run_id)));
        Ok(records)
    }

    pub fn get_run(&self, run_id: &RunId) -> Result<RunRecord, StoreError> {
        let _guard = self.index_lock.lock().expect("index lock");
        self.read_index()?
            .into_iter()
            .find(|r| &r.run_id == run_id)
            .ok_or_else(|| StoreError::NotFound(run_id.clone()))
    }

    fn tail(&self, run_id: &RunId) -> Result<Tail, StoreError> {
        if let Some(t) = self.tails.lock().expect("tail lock").get(run_id) {
            return Ok(t.clone());
        }
        let events = self.read_log(run_id)?;
        Ok(events.last().map_or(
            Tail {
                seq: 0,
                sum: GENESIS_SUM.into(),
            },
            |(e, sum)| Tail {
                seq: e.seq,
                sum: sum.clone(),
            },
        ))
    }

    /// Appends one event; its seq must directly follow the last persisted one.
    /// The line is fsynced before returning.
    pub fn append_event(&self, run_id: &RunId, event: &Event) -> Result<(), StoreError> {
        let tail = self.tail(run_id)?;
        if event.seq != tail.seq + 1 {
            return Err(StoreError::SeqConflict {
                expected: tail.seq + 1,
                found: event.seq,
            });
        }
        let mut value = serde_json::to_value(event).expect("events serialize");
        let sum = chain_sum(&tail.sum, &value.to_string());
        value
            .as_object_mut()
            .expect("events are objects")
            .insert("sum".into(), Value::String(sum.clone()));
        let path = self.log_path(run_id);
        let mut f = OpenOptions::new().append(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                StoreError::NotFound(run_id.clone())
            } else {
                io_err(&path)(e)
            }
        })?;
        writeln!(f, "{value}").map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))?;
        self.tails.lock().expect("tail lock").insert(
            run_id.clone(),
            Tail {
                seq: event.seq,
                sum,
            },
        );
        Ok(())
    }

    pub fn append_events(&self, run_id: &RunId, events: &[Event]) -> Result<(), StoreError> {
        events.iter().try_for_each(|e| self.append_event(run_id, e))
    }

    fn read_log(&self, run_id: &RunId) -> Result<Vec<(Event, String)>, StoreError> {
        let path = self.log_path(run_id);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::NotFound(run_id.clone())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut out: Vec<(Event, String)> = Vec::new();
        let mut prev = GENESIS_SUM.to_string();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let seq = out.last().map_or(1, |(e, _)| e.seq + 1);
            let corrupt = |reason: String| StoreError::CorruptLog {
                run_id: run_id.clone(),
                seq,
                reason,
            };
            let mut value: Value = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            let sum = value
                .as_object_mut()
                .and_then(|o| o.remove("sum"))
                .and_then(|v| v.as_str().map(str::to_string))
                .ok_or_else(|| corrupt("missing checksum".into()))?;
            if chain_sum(&prev, &value.to_string()) != sum {
                return Err(corrupt("checksum mismatch".into()));
            }
            let event: Event = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
            if event.seq != seq {
                return Err(corrupt(format!("expected seq {seq}, found {}", event.seq)));
            }
            prev = sum.clone();
            out.push((event, sum));
        }
        Ok(out)
    }

    pub fn load_events(&self, run_id: &RunId) -> Result<Vec<Event>, StoreError> {
        Ok(self.read_log(run_id)?.into_iter().map(|(e, _)| e).collect())
    }

    /// Loads a run's record and rebuilds its state by replaying the log.
    pub fn load_run(&self, run_id: &RunId) -> Result<(RunRecord, RunState), StoreError> {
        let record = self.get_run(run_id)?;
        let events = self.load_events(run_id)?;
        let state = RunState::replay(
            record.run_id.clone(),
            record.goal.clone(),
            record.target.clone(),
            record.limits,
            events,
        )?;
        Ok((record, state))
    }

    pub fn write_report(&self, run_id: &RunId, format: ReportFormat, content: &str) -> Result<PathBuf, StoreError> {
        let path = self.report_path(run_id, format);
        fs::write(&path, content).map_err(io_err(&path))?;
        Ok(path)
    }
}
