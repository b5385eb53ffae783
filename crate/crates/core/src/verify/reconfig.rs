//! Properties of the configuration sequences clients end operations with,
//! and of the successor pointers servers hold.

use std::collections::BTreeMap;

use crate::history::{OpRecord, ServerEvent};
use crate::types::{ScopeId, ServerId};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReconfigReport {
    pub uniqueness: Vec<String>,
    pub subsequence: Vec<String>,
    pub progress: Vec<String>,
    pub next_monotonic: Vec<String>,
    pub list_bound: Vec<String>,
}

/// Uniqueness over every snapshot; subsequence (λ) and progress (μ) over
/// every real-time ordered pair of operations in one scope.
pub fn check_sequences(ops: &[OpRecord], report: &mut ReconfigReport) {
    let mut by_scope: BTreeMap<&ScopeId, Vec<&OpRecord>> = BTreeMap::new();
    for op in ops.iter().filter(|o| o.response.is_some() && o.cseq.is_some()) {
        by_scope.entry(&op.scope).or_default().push(op);
    }
    for (scope, mut recs) in by_scope {
        let mut at_index: BTreeMap<u64, (&str, u64)> = BTreeMap::new();
        for op in &recs {
            for e in &op.cseq.as_ref().expect("filtered").entries {
                match at_index.get(&e.index) {
                    None => {
                        at_index.insert(e.index, (e.config.as_str(), op.op));
                    }
                    Some((cfg, first)) if *cfg != e.config => report.uniqueness.push(format!(
                        "{scope}: index {} holds {cfg} in op {first} but {} in op {}",
                        e.index, e.config, op.op
                    )),
                    Some(_) => {}
                }
            }
        }
        recs.sort_by_key(|o| o.response.expect("filtered").step);
        // Running maxima of (λ, μ) over operations ordered by response.
        let mut best_lambda: Vec<(u64, u64, u64)> = Vec::with_capacity(recs.len());
        let mut best_mu: Vec<(u64, u64, u64)> = Vec::with_capacity(recs.len());
        for op in &recs {
            let snap = op.cseq.as_ref().expect("filtered");
            let resp = op.response.expect("filtered").step;
            let l = match best_lambda.last() {
                Some(&(_, v, id)) if v >= snap.lambda => (resp, v, id),
                _ => (resp, snap.lambda, op.op),
            };
            let m = match best_mu.last() {
                Some(&(_, v, id)) if v >= snap.mu => (resp, v, id),
                _ => (resp, snap.mu, op.op),
            };
            best_lambda.push(l);
            best_mu.push(m);
        }
        for op in &recs {
            let snap = op.cseq.as_ref().expect("filtered");
            let n = best_lambda.partition_point(|(r, _, _)| *r < op.invoke.step);
            if n == 0 {
                continue;
            }
            let (_, lambda, lid) = best_lambda[n - 1];
            if snap.lambda < lambda {
                report.subsequence.push(format!(
                    "{scope}: op {lid} ended with lambda {lambda}, later op {} with {}",
                    op.op, snap.lambda
                ));
            }
            let (_, mu, mid) = best_mu[n - 1];
            if snap.mu < mu {
                report.progress.push(format!("{scope}: op {mid} ended with mu {mu}, later op {} with {}", op.op, snap.mu));
            }
        }
    }
}

/// Successor ids never decrease per server slot; lists stay within bound.
pub fn check_servers(events: &[ServerEvent], report: &mut ReconfigReport) {
    let mut last: BTreeMap<(ServerId, &ScopeId, u64), Option<u64>> = BTreeMap::new();
    for e in events {
        let prev = last.insert((e.server, &e.scope, e.config), e.next);
        if let Some(p) = prev {
            if e.next < p {
                report.next_monotonic.push(format!(
                    "{} {}/{}: next went from {:?} to {:?} at tick {}",
                    e.server, e.scope, e.config, p, e.next, e.tick
                ));
            }
        }
        if e.list_len > e.list_bound {
            report.list_bound.push(format!(
                "{} {}/{} {:?}: list holds {} pairs, bound {} at tick {}",
                e.server, e.scope, e.config, e.object, e.list_len, e.list_bound, e.tick
            ));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::{OpKind, Stamp};
    use crate::types::{ClientId, SequenceSnapshot, SnapshotEntry, Status};

    fn op(id: u64, inv: u64, resp: u64, entries: &[(u64, &str, Status)]) -> OpRecord {
        let mu = entries.iter().filter(|e| e.2 == Status::F).map(|e| e.0).max().unwrap_or(0);
        let lambda = entries.iter().map(|e| e.0).max().unwrap_or(0);
        OpRecord {
            op: id,
            parent: None,
            client: ClientId(1),
            kind: OpKind::Read,
            scope: ScopeId::new("x"),
            object: None,
            invoke: Stamp { step: inv, tick: inv },
            response: Some(Stamp { step: resp, tick: resp }),
            tag: None,
            value: None,
            installed: None,
            cseq: Some(SequenceSnapshot {
                mu,
                lambda,
                entries: entries
                    .iter()
                    .map(|(i, c, s)| SnapshotEntry { index: *i, config: c.to_string(), status: *s })
                    .collect(),
            }),
            contacted: vec![],
            round_trips: 0,
            error: None,
        }
    }

    #[test]
    fn consistent_runs_pass() {
        let ops = vec![
            op(1, 1, 2, &[(0, "a", Status::F)]),
            op(2, 3, 6, &[(0, "a", Status::F), (1, "b", Status::P)]),
            op(3, 7, 8, &[(0, "a", Status::F), (1, "b", Status::F)]),
        ];
        let mut r = ReconfigReport::default();
        check_sequences(&ops, &mut r);
        assert_eq!(r, ReconfigReport::default());
    }

    #[test]
    fn mutated_snapshot_is_rejected() {
        let ops = vec![
            op(1, 1, 2, &[(0, "a", Status::F), (1, "b", Status::F)]),
            op(2, 3, 4, &[(0, "a", Status::F), (1, "c", Status::F)]),
            op(3, 5, 6, &[(0, "a", Status::F)]),
        ];
        let mut r = ReconfigReport::default();
        check_sequences(&ops, &mut r);
        assert_eq!(r.uniqueness.len(), 1);
        assert_eq!(r.subsequence.len(), 1);
        assert_eq!(r.progress.len(), 1);
    }

    #[test]
    fn concurrent_ops_are_unconstrained() {
        let ops = vec![op(1, 1, 5, &[(0, "a", Status::F), (1, "b", Status::F)]), op(2, 2, 6, &[(0, "a", Status::F)])];
        let mut r = ReconfigReport::default();
        check_sequences(&ops, &mut r);
        assert_eq!(r, ReconfigReport::default());
    }

    #[test]
    fn server_pointer_regression_and_list_overflow() {
        let ev = |next, len| ServerEvent {
            server: ServerId(1),
            tick: 0,
            request: "X".into(),
            scope: ScopeId::new("x"),
            config: 0,
            object: None,
            next,
            next_status: None,
            list_len: len,
            list_bound: 2,
        };
        let mut r = ReconfigReport::default();
        check_servers(&[ev(None, 1), ev(Some(3), 2), ev(Some(2), 3)], &mut r);
        assert_eq!(r.next_monotonic.len(), 1);
        assert_eq!(r.list_bound.len(), 1);
    }
}
