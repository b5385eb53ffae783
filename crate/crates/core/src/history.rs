//! Recorded executions: client operations, DAP invocations, server state
//! changes and the run outcome, serialized one JSON record per line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ClientId, ObjectId, ScopeId, SequenceSnapshot, ServerId, Status, Tag, ValueDigest};

/// A point in the execution. `step` is a global counter that increases with
/// every recorded invocation or response, so precedence is `a.step < b.step`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stamp {
    pub step: u64,
    pub tick: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpKind {
    Read,
    Write,
    Reconfig,
    FileRead,
    FileWrite,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpRecord {
    pub op: u64,
    /// Enclosing file-level operation for block reads and writes.
    pub parent: Option<u64>,
    pub client: ClientId,
    pub kind: OpKind,
    pub scope: ScopeId,
    pub object: Option<ObjectId>,
    pub invoke: Stamp,
    pub response: Option<Stamp>,
    /// Tag written (write) or returned (read).
    pub tag: Option<Tag>,
    /// Value written (write) or returned (read).
    pub value: Option<ValueDigest>,
    /// Configuration installed by a reconfig.
    pub installed: Option<u64>,
    pub cseq: Option<SequenceSnapshot>,
    /// Configuration ids whose servers this operation exchanged messages with,
    /// in first-contact order.
    pub contacted: Vec<u64>,
    pub round_trips: u64,
    pub error: Option<String>,
}

impl OpRecord {
    pub fn is_complete(&self) -> bool {
        self.response.is_some()
    }

    /// Real-time order: `self` responded before `other` was invoked.
    pub fn precedes(&self, other: &OpRecord) -> bool {
        self.response.is_some_and(|r| r.step < other.invoke.step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DapOp {
    GetTag,
    GetData,
    PutData,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DapRecord {
    pub op: u64,
    pub client: ClientId,
    pub kind: DapOp,
    pub scope: ScopeId,
    pub object: ObjectId,
    pub config: u64,
    pub invoke: Stamp,
    pub response: Option<Stamp>,
    pub tag: Option<Tag>,
    pub value: Option<ValueDigest>,
}

impl DapRecord {
    pub fn precedes(&self, other: &DapRecord) -> bool {
        self.response.is_some_and(|r| r.step < other.invoke.step)
    }
}

/// State of one server's `(scope, configuration[, object])` slot right after a
/// handler ran.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerEvent {
    pub server: ServerId,
    pub tick: u64,
    pub request: String,
    pub scope: ScopeId,
    pub config: u64,
    pub object: Option<ObjectId>,
    pub next: Option<u64>,
    pub next_status: Option<Status>,
    pub list_len: usize,
    pub list_bound: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Quiescent,
    Deadlock,
    TickLimit,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: RunStatus,
    pub end_tick: u64,
    pub events: u64,
    pub proposals: u64,
    /// Outstanding waiters on deadlock.
    pub waiting: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LogRecord {
    Op(OpRecord),
    Dap(DapRecord),
    Server(ServerEvent),
    Crash { node: String, tick: u64 },
    Outcome(Outcome),
}

/// Everything a checker needs about one execution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExecutionLog {
    pub ops: Vec<OpRecord>,
    pub daps: Vec<DapRecord>,
    pub servers: Vec<ServerEvent>,
    pub crashed_clients: Vec<ClientId>,
    pub crashed_servers: Vec<ServerId>,
    pub crashes: Vec<(String, u64)>,
    pub outcome: Option<Outcome>,
}

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct LogParseError {
    pub line: usize,
    pub message: String,
}

impl ExecutionLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |rec: LogRecord| {
            out.push_str(&serde_json::to_string(&rec).expect("log records serialize"));
            out.push('\n');
        };
        for (node, tick) in &self.crashes {
            push(LogRecord::Crash { node: node.clone(), tick: *tick });
        }
        for op in &self.ops {
            push(LogRecord::Op(op.clone()));
        }
        for d in &self.daps {
            push(LogRecord::Dap(d.clone()));
        }
        for s in &self.servers {
            push(LogRecord::Server(s.clone()));
        }
        if let Some(o) = &self.outcome {
            push(LogRecord::Outcome(o.clone()));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogParseError> {
        let mut log = ExecutionLog::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogRecord =
                serde_json::from_str(line).map_err(|e| LogParseError { line: i + 1, message: e.to_string() })?;
            match rec {
                LogRecord::Op(op) => log.ops.push(op),
                LogRecord::Dap(d) => log.daps.push(d),
                LogRecord::Server(s) => log.servers.push(s),
                LogRecord::Crash { node, tick } => log.note_crash(node, tick),
                LogRecord::Outcome(o) => log.outcome = Some(o),
            }
        }
        Ok(log)
    }

    pub fn note_crash(&mut self, node: String, tick: u64) {
        if let Some(id) = node.strip_prefix('c').and_then(|s| s.parse().ok()) {
            self.crashed_clients.push(ClientId(id));
        } else if let Some(id) = node.strip_prefix('s').and_then(|s| s.parse().ok()) {
            self.crashed_servers.push(ServerId(id));
        }
        self.crashes.push((node, tick));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_line_errors() {
        let mut log = ExecutionLog::default();
        log.note_crash("c3".into(), 10);
        log.note_crash("s1".into(), 12);
        log.ops.push(OpRecord {
            op: 1,
            parent: None,
            client: ClientId(2),
            kind: OpKind::Write,
            scope: ScopeId::new("x"),
            object: Some(ObjectId::new("x").unwrap()),
            invoke: Stamp { step: 1, tick: 0 },
            response: None,
            tag: Some(Tag::new(1, 2)),
            value: Some(ValueDigest::of(b"a")),
            installed: None,
            cseq: None,
            contacted: vec![0],
            round_trips: 1,
            error: None,
        });
        let text = log.to_jsonl();
        let back = ExecutionLog::from_jsonl(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.crashed_clients, vec![ClientId(3)]);

        let bad = format!("{text}{{\"type\":\"op\"}}\n");
        let err = ExecutionLog::from_jsonl(&bad).unwrap_err();
        assert_eq!(err.line, 4);
    }
}
