//! Offline checks over a recorded execution.

pub mod linearizability;
pub mod property1;
pub mod reconfig;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::history::{ExecutionLog, OpKind, RunStatus};
use crate::types::{ObjectId, ValueDigest};

use linearizability::{check_linearizable, register_history, Verdict};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Report {
    pub checks: Vec<CheckResult>,
    /// Witness order per object, for linearizable objects.
    #[serde(skip)]
    pub witnesses: BTreeMap<ObjectId, Vec<u64>>,
}

/// Shown at most per check in text renderings.
const SHOWN: usize = 10;

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{status} {:<22} checked {}", c.name, c.checked);
            for v in c.violations.iter().take(SHOWN) {
                let _ = writeln!(out, "     {v}");
            }
            if c.violations.len() > SHOWN {
                let _ = writeln!(out, "     ... {} more", c.violations.len() - SHOWN);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn push(&mut self, name: &str, checked: usize, violations: Vec<String>) {
        self.checks.push(CheckResult { name: name.to_string(), passed: violations.is_empty(), checked, violations });
    }
}

pub fn verify(log: &ExecutionLog) -> Report {
    let initial = ValueDigest::initial();
    let mut report = Report { checks: Vec::new(), witnesses: BTreeMap::new() };

    let mut per_object: BTreeMap<&ObjectId, Vec<_>> = BTreeMap::new();
    for op in log.ops.iter().filter(|o| matches!(o.kind, OpKind::Read | OpKind::Write)) {
        if let Some(obj) = &op.object {
            per_object.entry(obj).or_default().push(op);
        }
    }
    let mut lin = Vec::new();
    for (obj, ops) in &per_object {
        match register_history(ops.iter().copied()).and_then(|h| check_linearizable(&h, &initial)) {
            Ok(Verdict::Linearizable { witness }) => {
                report.witnesses.insert((*obj).clone(), witness);
            }
            Ok(v) => lin.push(format!("{obj}: {v}")),
            Err(e) => lin.push(format!("{obj}: malformed history: {e}")),
        }
    }
    report.push("linearizability", per_object.len(), lin);

    let p1 = property1::check_property1(&log.daps, &initial);
    report.push("property1-c1", p1.checked_gets, p1.c1);
    report.push("property1-c2", p1.checked_gets, p1.c2);

    let mut rc = reconfig::ReconfigReport::default();
    reconfig::check_sequences(&log.ops, &mut rc);
    reconfig::check_servers(&log.servers, &mut rc);
    let snaps = log.ops.iter().filter(|o| o.cseq.is_some()).count();
    report.push("config-uniqueness", snaps, rc.uniqueness);
    report.push("subsequence", snaps, rc.subsequence);
    report.push("sequence-progress", snaps, rc.progress);
    report.push("next-monotonic", log.servers.len(), rc.next_monotonic);
    report.push("list-bound", log.servers.len(), rc.list_bound);

    let reads: Vec<_> = log.ops.iter().filter(|o| matches!(o.kind, OpKind::Read) && o.is_complete()).collect();
    let bottoms = reads
        .iter()
        .filter(|o| o.value.as_ref().is_none_or(ValueDigest::is_bottom))
        .map(|o| format!("read op {} by {} returned bottom", o.op, o.client))
        .collect();
    report.push("read-non-bottom", reads.len(), bottoms);

    let mut live = Vec::new();
    if let Some(outcome) = &log.outcome {
        if outcome.status != RunStatus::Quiescent {
            live.push(format!("run ended {:?} at tick {}", outcome.status, outcome.end_tick));
            live.extend(outcome.waiting.iter().cloned());
        }
    }
    for op in &log.ops {
        if log.crashed_clients.contains(&op.client) {
            continue;
        }
        if !op.is_complete() {
            live.push(format!("op {} ({:?}) by {} never completed", op.op, op.kind, op.client));
        } else if let Some(e) = &op.error {
            live.push(format!("op {} ({:?}) by {} failed: {e}", op.op, op.kind, op.client));
        }
    }
    report.push("liveness", log.ops.len(), live);
    report
}
