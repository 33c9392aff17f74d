//! Probe traces: one JSON object per line, appended as probes complete.
//!
//! | field      | meaning                                                 |
//! |------------|---------------------------------------------------------|
//! | `seq`      | kernel-wide order of completion                         |
//! | `batch`    | id of the `handle_batch` call that served the probe    |
//! | `probe_id`, `agent_id`, `principal`, `turn` | copied from the probe  |
//! | `task`     | task id when the agent id is `<task_id>/...` and known |
//! | `kind`     | `sql_batch`, `locate` or `branch_op`                    |
//! | `phase`    | the phase the agent declared                            |
//! | `label`    | activity label assigned by the classifier               |
//! | `branch`   | branch read or operated on                              |
//! | `queries`  | per query: qid, sql, fingerprint, label, action, status, row count, executed and cache-hit operator counts, sub-plan records |
//! | `feedback` | feedback kinds attached to the response                 |
//! | `stats`    | operator counts from the response                       |
//! | `error`    | error code when the probe failed                        |
//! | `probe`    | the probe document as received (after parsing)          |

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::branch::BranchId;
use crate::error::{Error, Result};
use crate::feedback::FeedbackKind;
use crate::planner::SubplanRecord;
use crate::protocol::{OutcomeStatus, Phase, ResponseStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceQuery {
    pub qid: String,
    pub sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Phase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<OutcomeStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default)]
    pub executed: u64,
    #[serde(default)]
    pub cache_hits: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subplans: Vec<SubplanRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub seq: u64,
    #[serde(default)]
    pub batch: u64,
    pub probe_id: String,
    pub agent_id: String,
    pub principal: String,
    pub turn: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub kind: String,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Phase>,
    pub branch: BranchId,
    #[serde(default)]
    pub queries: Vec<TraceQuery>,
    #[serde(default)]
    pub feedback: Vec<FeedbackKind>,
    #[serde(default)]
    pub stats: ResponseStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub probe: serde_json::Value,
}

/// What a replay compares: per query, everything except timings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub qid: String,
    pub action: Option<String>,
    pub status: Option<OutcomeStatus>,
    pub rows: Option<usize>,
    pub executed: u64,
    pub cache_hits: u64,
}

impl TraceRecord {
    pub fn outcome_summary(&self) -> (Option<String>, Vec<OutcomeSummary>) {
        let qs = self
            .queries
            .iter()
            .map(|q| OutcomeSummary {
                qid: q.qid.clone(),
                action: q.action.clone(),
                status: q.status,
                rows: q.rows,
                executed: q.executed,
                cache_hits: q.cache_hits,
            })
            .collect();
        (self.error.clone(), qs)
    }

    /// Trajectory grouping key: the task when known, else the agent.
    pub fn group(&self) -> &str {
        self.task.as_deref().unwrap_or(&self.agent_id)
    }
}

pub struct TraceWriter {
    out: Box<dyn Write + Send>,
}

impl std::fmt::Debug for TraceWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TraceWriter")
    }
}

impl TraceWriter {
    pub fn new(out: Box<dyn Write + Send>) -> Self {
        TraceWriter { out }
    }

    /// A writer into memory, plus a handle for reading what was written.
    pub fn buffer() -> (Self, TraceBuffer) {
        let buf = TraceBuffer::default();
        (TraceWriter::new(Box::new(buf.clone())), buf)
    }

    /// Append to (or create) a trace file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(TraceWriter::new(Box::new(std::io::BufWriter::new(f))))
    }

    pub fn write(&mut self, r: &TraceRecord) -> Result<()> {
        writeln!(self.out, "{}", serde_json::to_string(r)?)?;
        self.out.flush()?;
        Ok(())
    }
}

/// Shared in-memory trace sink.
#[derive(Debug, Clone, Default)]
pub struct TraceBuffer(Arc<Mutex<Vec<u8>>>);

impl TraceBuffer {
    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn records(&self) -> Result<Vec<TraceRecord>> {
        parse_trace(&self.bytes()[..])
    }
}

impl Write for TraceBuffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap_or_else(|e| e.into_inner()).extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_trace(BufReader::new(f))
}

pub fn parse_trace(reader: impl BufRead) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TraceRecord =
            serde_json::from_str(&line).map_err(|e| Error::Config(format!("trace line {}: {e}", n + 1)))?;
        out.push(r);
    }
    Ok(out)
}
