//! Nested spans over simulated time, one JSON record per line, and the
//! per-phase summarizer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::ClientId;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub trace_id: u64,
    pub span_id: u64,
    pub parent: Option<u64>,
    pub name: String,
    pub start: u64,
    /// `None` for spans still open when the run ended (crashed clients).
    pub end: Option<u64>,
    pub round_trips: u64,
    pub attrs: BTreeMap<String, String>,
}

impl Span {
    pub fn duration(&self) -> Option<u64> {
        self.end.map(|e| e - self.start)
    }

    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }
}

/// Collects spans for all clients. Each client has its own stack of open
/// spans; opening with an empty stack starts a new trace.
#[derive(Debug, Default)]
pub struct Tracer {
    next_span: u64,
    open: BTreeMap<u64, Span>,
    stacks: BTreeMap<ClientId, Vec<u64>>,
    closed: Vec<Span>,
}

impl Tracer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&mut self, client: ClientId, trace_id: u64, name: &str, attrs: BTreeMap<String, String>, now: u64) -> u64 {
        self.next_span += 1;
        let id = self.next_span;
        let stack = self.stacks.entry(client).or_default();
        let parent = stack.last().copied();
        let trace_id = parent.map_or(trace_id, |p| self.open[&p].trace_id);
        stack.push(id);
        self.open.insert(
            id,
            Span { trace_id, span_id: id, parent, name: name.to_string(), start: now, end: None, round_trips: 0, attrs },
        );
        id
    }

    pub fn close(&mut self, client: ClientId, span_id: u64, now: u64) {
        let stack = self.stacks.get_mut(&client).expect("client has open spans");
        assert_eq!(stack.pop(), Some(span_id), "spans close innermost first");
        let mut span = self.open.remove(&span_id).expect("span is open");
        span.end = Some(now);
        self.closed.push(span);
    }

    /// Charges one quorum round to every open span of `client`.
    pub fn round_trip(&mut self, client: ClientId) {
        for id in self.stacks.get(&client).into_iter().flatten() {
            self.open.get_mut(id).expect("stacked span is open").round_trips += 1;
        }
    }

    pub fn set_attr(&mut self, client: ClientId, key: &str, value: String) {
        if let Some(id) = self.stacks.get(&client).and_then(|s| s.last()) {
            self.open.get_mut(id).expect("stacked span is open").attrs.insert(key.to_string(), value);
        }
    }

    /// Closed spans in close order, followed by spans left open.
    pub fn finish(mut self) -> Vec<Span> {
        let open = std::mem::take(&mut self.open);
        self.closed.extend(open.into_values());
        self.closed
    }
}

pub fn to_jsonl(spans: &[Span]) -> String {
    let mut out = String::new();
    for s in spans {
        out.push_str(&serde_json::to_string(s).expect("spans serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

pub fn parse_jsonl(text: &str) -> Result<Vec<Span>, TraceParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| TraceParseError { line: i + 1, message: e.to_string() }))
        .collect()
}

/// Reports children that escape their parent's interval, parents missing
/// from the log, and parents charged fewer rounds than their children.
pub fn check_nesting(spans: &[Span]) -> Vec<String> {
    let by_id: BTreeMap<u64, &Span> = spans.iter().map(|s| (s.span_id, s)).collect();
    let mut child_rounds: BTreeMap<u64, u64> = BTreeMap::new();
    let mut problems = Vec::new();
    for s in spans {
        let Some(pid) = s.parent else { continue };
        let Some(p) = by_id.get(&pid) else {
            problems.push(format!("span {} names missing parent {pid}", s.span_id));
            continue;
        };
        if p.trace_id != s.trace_id {
            problems.push(format!("span {} is in trace {} but its parent is in {}", s.span_id, s.trace_id, p.trace_id));
        }
        if s.start < p.start {
            problems.push(format!("span {} starts at {} before parent {} at {}", s.span_id, s.start, pid, p.start));
        }
        if let (Some(ce), Some(pe)) = (s.end, p.end) {
            if ce > pe {
                problems.push(format!("span {} ends at {ce} after parent {pid} at {pe}", s.span_id));
            }
        }
        if s.end.is_some() && p.end.is_some() {
            *child_rounds.entry(pid).or_default() += s.round_trips;
        }
    }
    for (pid, sum) in child_rounds {
        let p = by_id[&pid];
        if p.round_trips < sum {
            problems.push(format!("span {pid} has {} round trips, children add up to {sum}", p.round_trips));
        }
    }
    problems
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub operation: String,
    pub span: String,
    pub config: String,
    pub count: u64,
    pub mean_duration: f64,
    pub max_duration: u64,
    pub mean_round_trips: f64,
    pub max_round_trips: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

/// Aggregates closed spans by (root operation, span name, configuration).
pub fn summarize(spans: &[Span]) -> Summary {
    let roots: BTreeMap<u64, &str> =
        spans.iter().filter(|s| s.parent.is_none()).map(|s| (s.trace_id, s.name.as_str())).collect();
    #[derive(Default)]
    struct Acc {
        count: u64,
        dur: u64,
        max_dur: u64,
        rt: u64,
        max_rt: u64,
    }
    let mut groups: BTreeMap<(String, String, String), Acc> = BTreeMap::new();
    for s in spans {
        let Some(d) = s.duration() else { continue };
        let op = roots.get(&s.trace_id).copied().unwrap_or("?").to_string();
        let cfg = s.attr("config").unwrap_or("-").to_string();
        let acc = groups.entry((op, s.name.clone(), cfg)).or_default();
        acc.count += 1;
        acc.dur += d;
        acc.max_dur = acc.max_dur.max(d);
        acc.rt += s.round_trips;
        acc.max_rt = acc.max_rt.max(s.round_trips);
    }
    let rows = groups
        .into_iter()
        .map(|((operation, span, config), a)| SummaryRow {
            operation,
            span,
            config,
            count: a.count,
            mean_duration: a.dur as f64 / a.count as f64,
            max_duration: a.max_dur,
            mean_round_trips: a.rt as f64 / a.count as f64,
            max_round_trips: a.max_rt,
        })
        .collect();
    Summary { rows }
}

impl Summary {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<18} {:>6} {:>7} {:>10} {:>8} {:>9} {:>7}",
            "operation", "span", "config", "count", "mean-ticks", "max-ticks", "mean-rt", "max-rt"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:<18} {:>6} {:>7} {:>10.2} {:>8} {:>9.2} {:>7}",
                r.operation, r.span, r.config, r.count, r.mean_duration, r.max_duration, r.mean_round_trips, r.max_round_trips
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn row(&self, operation: &str, span: &str, config: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.operation == operation && r.span == span && r.config == config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(cfg: &str) -> BTreeMap<String, String> {
        BTreeMap::from([("config".to_string(), cfg.to_string())])
    }

    #[test]
    fn nesting_and_round_trip_charging() {
        let mut t = Tracer::new();
        let c = ClientId(1);
        let root = t.open(c, 7, "read", BTreeMap::new(), 0);
        let a = t.open(c, 99, "get-data", attrs("0"), 1);
        t.round_trip(c);
        t.close(c, a, 5);
        let b = t.open(c, 99, "put-data", attrs("0"), 5);
        t.round_trip(c);
        t.close(c, b, 9);
        t.close(c, root, 9);
        let spans = t.finish();
        assert_eq!(spans.len(), 3);
        assert!(spans.iter().all(|s| s.trace_id == 7));
        let root = spans.iter().find(|s| s.parent.is_none()).unwrap();
        assert_eq!(root.round_trips, 2);
        assert!(check_nesting(&spans).is_empty());

        let summary = summarize(&spans);
        let gd = summary.row("read", "get-data", "0").unwrap();
        assert_eq!((gd.count, gd.max_duration, gd.max_round_trips), (1, 4, 1));
        assert!(summary.table().contains("get-data"));
    }

    #[test]
    fn nesting_violations_are_reported() {
        let mk = |id, parent, start, end, rt| Span {
            trace_id: 1,
            span_id: id,
            parent,
            name: "x".into(),
            start,
            end: Some(end),
            round_trips: rt,
            attrs: BTreeMap::new(),
        };
        let spans = vec![mk(1, None, 5, 10, 0), mk(2, Some(1), 4, 11, 1), mk(3, Some(8), 5, 6, 0)];
        let problems = check_nesting(&spans);
        assert_eq!(problems.len(), 4, "{problems:?}");
    }

    #[test]
    fn open_spans_survive_with_no_end() {
        let mut t = Tracer::new();
        t.open(ClientId(3), 1, "write", BTreeMap::new(), 2);
        let spans = t.finish();
        assert_eq!(spans[0].end, None);
        assert!(summarize(&spans).rows.is_empty());
    }

    #[test]
    fn parse_reports_line_numbers() {
        let mut t = Tracer::new();
        let s = t.open(ClientId(1), 1, "read", BTreeMap::new(), 0);
        t.close(ClientId(1), s, 3);
        let text = to_jsonl(&t.finish());
        assert_eq!(parse_jsonl(&text).unwrap().len(), 1);
        let err = parse_jsonl(&format!("{text}\nnot json\n")).unwrap_err();
        assert_eq!(err.line, 3);
    }
}
