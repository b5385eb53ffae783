//! Single-register linearizability.
//!
//! The fast path orders operations by the tags the protocol attached to
//! them and validates that order against real time. When it fails on a
//! small history, an exhaustive search over all orders decides.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::history::{OpKind, OpRecord};
use crate::types::{Tag, ValueDigest};

/// Histories up to this many operations fall back to exhaustive search.
pub const EXHAUSTIVE_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegKind {
    Read,
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegOp {
    pub id: u64,
    pub kind: RegKind,
    pub value: ValueDigest,
    pub tag: Option<Tag>,
    pub invoke: u64,
    /// `None` for operations that never responded.
    pub response: Option<u64>,
}

impl RegOp {
    pub fn precedes(&self, other: &RegOp) -> bool {
        self.response.is_some_and(|r| r < other.invoke)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HistoryError {
    #[error("operation {0} responds before it is invoked")]
    ResponseBeforeInvoke(u64),
    #[error("operation {0} appears twice")]
    DuplicateId(u64),
    #[error("operation {0} is not a read or write")]
    NotRegisterOp(u64),
    #[error("completed read {0} carries no value")]
    ReadWithoutValue(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// A total order, as operation ids.
    Linearizable { witness: Vec<u64> },
    NotLinearizable { pair: Option<(u64, u64)>, reason: String },
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Linearizable { .. })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Linearizable { witness } => {
                writeln!(f, "linearizable")?;
                for (i, id) in witness.iter().enumerate() {
                    writeln!(f, "  {:>3}. op {id}", i + 1)?;
                }
                Ok(())
            }
            Verdict::NotLinearizable { pair: Some((a, b)), reason } => {
                write!(f, "not linearizable: op {a} and op {b}: {reason}")
            }
            Verdict::NotLinearizable { pair: None, reason } => write!(f, "not linearizable: {reason}"),
        }
    }
}

/// Converts recorded reads and writes of one object. Reads that did not
/// return (or failed) are dropped; failed writes are kept as pending.
pub fn register_history<'a>(ops: impl IntoIterator<Item = &'a OpRecord>) -> Result<Vec<RegOp>, HistoryError> {
    let mut out = Vec::new();
    for op in ops {
        let kind = match op.kind {
            OpKind::Read => RegKind::Read,
            OpKind::Write => RegKind::Write,
            _ => return Err(HistoryError::NotRegisterOp(op.op)),
        };
        let ok = op.error.is_none();
        let response = op.response.filter(|_| ok).map(|s| s.step);
        if kind == RegKind::Read && response.is_none() {
            continue;
        }
        let value = match (&op.value, kind) {
            (Some(v), _) => v.clone(),
            (None, RegKind::Read) => return Err(HistoryError::ReadWithoutValue(op.op)),
            (None, RegKind::Write) => continue,
        };
        out.push(RegOp { id: op.op, kind, value, tag: op.tag, invoke: op.invoke.step, response });
    }
    Ok(out)
}

fn validate(history: &[RegOp]) -> Result<(), HistoryError> {
    let mut seen = HashSet::new();
    for op in history {
        if !seen.insert(op.id) {
            return Err(HistoryError::DuplicateId(op.id));
        }
        if op.response.is_some_and(|r| r < op.invoke) {
            return Err(HistoryError::ResponseBeforeInvoke(op.id));
        }
    }
    Ok(())
}

pub fn check_linearizable(history: &[RegOp], initial: &ValueDigest) -> Result<Verdict, HistoryError> {
    validate(history)?;
    let fast = fast_path(history, initial);
    if fast.is_ok() || history.len() > EXHAUSTIVE_LIMIT {
        return Ok(fast);
    }
    match exhaustive(history, initial) {
        Verdict::Linearizable { witness } => Ok(Verdict::Linearizable { witness }),
        Verdict::NotLinearizable { .. } => Ok(match fast {
            Verdict::NotLinearizable { pair: Some(p), reason } => Verdict::NotLinearizable { pair: Some(p), reason },
            _ => Verdict::NotLinearizable { pair: minimal_pair(history, initial), reason: "no valid order".into() },
        }),
    }
}

/// Tag order: writes by tag, each read right after the write it names,
/// same-tag reads by response.
pub fn fast_path(history: &[RegOp], initial: &ValueDigest) -> Verdict {
    let mut writes: BTreeMap<Tag, &RegOp> = BTreeMap::new();
    for w in history.iter().filter(|o| o.kind == RegKind::Write) {
        let Some(tag) = w.tag else {
            if w.response.is_some() {
                return Verdict::NotLinearizable { pair: None, reason: format!("write {} has no tag", w.id) };
            }
            continue;
        };
        if tag == Tag::INITIAL {
            return Verdict::NotLinearizable { pair: None, reason: format!("write {} carries the initial tag", w.id) };
        }
        if let Some(prev) = writes.insert(tag, w) {
            return Verdict::NotLinearizable { pair: Some((prev.id, w.id)), reason: format!("both wrote tag {tag}") };
        }
    }
    let mut read_tags: HashSet<Tag> = HashSet::new();
    for r in history.iter().filter(|o| o.kind == RegKind::Read) {
        let Some(tag) = r.tag else {
            return Verdict::NotLinearizable { pair: None, reason: format!("read {} has no tag", r.id) };
        };
        let expected = if tag == Tag::INITIAL {
            initial
        } else {
            match writes.get(&tag) {
                Some(w) => &w.value,
                None => {
                    return Verdict::NotLinearizable {
                        pair: None,
                        reason: format!("read {} returned tag {tag}, which no write produced", r.id),
                    }
                }
            }
        };
        if r.value != *expected {
            let pair = writes.get(&tag).map(|w| (w.id, r.id));
            return Verdict::NotLinearizable {
                pair,
                reason: format!("read {} returned a value different from the one written under {tag}", r.id),
            };
        }
        read_tags.insert(tag);
    }
    // Key: (tag, writes first, then by response order).
    let mut order: Vec<(Tag, u8, u64, &RegOp)> = Vec::new();
    for op in history {
        match (op.kind, op.tag) {
            (RegKind::Write, Some(tag)) => {
                if op.response.is_some() || read_tags.contains(&tag) {
                    order.push((tag, 0, op.invoke, op));
                }
            }
            (RegKind::Write, None) => {}
            (RegKind::Read, Some(tag)) => order.push((tag, 1, op.response.expect("reads completed"), op)),
            (RegKind::Read, None) => unreachable!(),
        }
    }
    order.sort_by_key(|(t, k, s, o)| (*t, *k, *s, o.id));
    let ops: Vec<&RegOp> = order.iter().map(|(_, _, _, o)| *o).collect();
    // Real time: no later element of the order may precede an earlier one.
    // Scanning right to left with the minimum response seen so far finds the
    // first such pair.
    let mut min_resp: Option<(u64, usize)> = None;
    for i in (0..ops.len()).rev() {
        if let Some((r, j)) = min_resp {
            if r < ops[i].invoke {
                return Verdict::NotLinearizable {
                    pair: Some((ops[j].id, ops[i].id)),
                    reason: format!(
                        "op {} finished before op {} started but is ordered after it by tag",
                        ops[j].id, ops[i].id
                    ),
                };
            }
        }
        if let Some(r) = ops[i].response {
            if min_resp.is_none_or(|(m, _)| r < m) {
                min_resp = Some((r, i));
            }
        }
    }
    Verdict::Linearizable { witness: ops.iter().map(|o| o.id).collect() }
}

/// Depth-first search over linearization points with memoization on
/// (linearized set, current value).
pub fn exhaustive(history: &[RegOp], initial: &ValueDigest) -> Verdict {
    assert!(history.len() <= 63, "exhaustive search is for small histories");
    let mut values: Vec<&ValueDigest> = vec![initial];
    let mut value_of = Vec::with_capacity(history.len());
    for op in history {
        let idx = values.iter().position(|v| **v == op.value).unwrap_or_else(|| {
            values.push(&op.value);
            values.len() - 1
        });
        value_of.push(idx);
    }
    let required: u64 = history.iter().enumerate().filter(|(_, o)| o.response.is_some()).fold(0, |m, (i, _)| m | 1 << i);
    let mut seen: HashSet<(u64, usize)> = HashSet::new();
    let mut path = Vec::new();
    if search(history, &value_of, required, 0, 0, &mut seen, &mut path) {
        Verdict::Linearizable { witness: path.iter().map(|&i| history[i].id).collect() }
    } else {
        Verdict::NotLinearizable { pair: None, reason: "no valid order".into() }
    }
}

fn search(
    h: &[RegOp],
    value_of: &[usize],
    required: u64,
    done: u64,
    value: usize,
    seen: &mut HashSet<(u64, usize)>,
    path: &mut Vec<usize>,
) -> bool {
    if done & required == required {
        return true;
    }
    if !seen.insert((done, value)) {
        return false;
    }
    // An operation may go next only if no pending-in-order completed
    // operation finished before it started.
    let horizon = h
        .iter()
        .enumerate()
        .filter(|(i, _)| done & (1 << i) == 0)
        .filter_map(|(_, o)| o.response)
        .min()
        .unwrap_or(u64::MAX);
    for (i, op) in h.iter().enumerate() {
        if done & (1 << i) != 0 || op.invoke > horizon {
            continue;
        }
        let next = match op.kind {
            RegKind::Read if value_of[i] != value => continue,
            RegKind::Read => value,
            RegKind::Write => value_of[i],
        };
        path.push(i);
        if search(h, value_of, required, done | 1 << i, next, seen, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// Smallest pair of operations whose two-operation sub-history, together
/// with every write, already admits no order. Falls back to `None`.
fn minimal_pair(history: &[RegOp], initial: &ValueDigest) -> Option<(u64, u64)> {
    let writes: Vec<&RegOp> = history.iter().filter(|o| o.kind == RegKind::Write).collect();
    for a in history {
        for b in history {
            if a.id >= b.id || !(a.precedes(b) || b.precedes(a)) {
                continue;
            }
            let mut sub: Vec<RegOp> = writes.iter().map(|w| RegOp { response: None, ..(*w).clone() }).collect();
            sub.retain(|w| w.id != a.id && w.id != b.id);
            sub.push(a.clone());
            sub.push(b.clone());
            if !exhaustive(&sub, initial).is_ok() {
                return Some((a.id, b.id));
            }
        }
    }
    None
}
