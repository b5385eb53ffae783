//! The checkers reject corrupted versions of real executions, and the two
//! linearizability strategies agree.

use ares_core::history::{ExecutionLog, OpKind};
use ares_core::runner;
use ares_core::scenario::{self, Scenario};
use ares_core::types::{Tag, ValueDigest};
use ares_core::verify::linearizability::{check_linearizable, exhaustive, fast_path, register_history, RegKind, RegOp};
use ares_core::verify::verify;
use proptest::prelude::*;

fn base() -> ExecutionLog {
    let path = format!("{}/../../scenarios/longevity.toml", env!("CARGO_MANIFEST_DIR"));
    let s = Scenario::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
    let log = runner::run(&s).log;
    assert!(verify(&log).passed());
    log
}

fn failing(log: &ExecutionLog) -> Vec<String> {
    verify(log).checks.into_iter().filter(|c| !c.passed).map(|c| c.name).collect()
}

#[test]
fn stale_read_is_caught() {
    let mut log = base();
    let last_read = log.ops.iter().rposition(|o| o.kind == OpKind::Read).unwrap();
    let r = &mut log.ops[last_read];
    r.value = Some(ValueDigest::initial());
    r.tag = Some(Tag::INITIAL);
    assert!(failing(&log).contains(&"linearizability".to_string()));
}

#[test]
fn invented_value_is_caught() {
    let mut log = base();
    let idx = log.ops.iter().position(|o| o.kind == OpKind::Read && o.tag != Some(Tag::INITIAL)).unwrap();
    log.ops[idx].value = Some(ValueDigest::of(b"never written"));
    assert!(failing(&log).contains(&"linearizability".to_string()));
}

#[test]
fn divergent_sequences_are_caught() {
    let mut log = base();
    let idx = log
        .ops
        .iter()
        .position(|o| o.cseq.as_ref().is_some_and(|c| c.entries.iter().any(|e| e.index > 0)))
        .unwrap();
    let snap = log.ops[idx].cseq.as_mut().unwrap();
    let e = snap.entries.iter_mut().find(|e| e.index > 0).unwrap();
    e.config = "forged".into();
    assert!(failing(&log).contains(&"config-uniqueness".to_string()));
}

#[test]
fn regressed_sequence_is_caught() {
    let mut log = base();
    let last = log.ops.len() - 1;
    let snap = log.ops[last].cseq.as_mut().unwrap();
    snap.entries.retain(|e| e.index == 0);
    snap.mu = 0;
    snap.lambda = 0;
    let failed = failing(&log);
    assert!(failed.contains(&"subsequence".to_string()), "{failed:?}");
    assert!(failed.contains(&"sequence-progress".to_string()), "{failed:?}");
}

#[test]
fn pointer_regression_and_overfull_list_are_caught() {
    let mut log = base();
    let (i, _) = log.servers.iter().enumerate().rev().find(|(_, e)| e.next.is_some()).unwrap();
    let mut ev = log.servers[i].clone();
    ev.next = None;
    ev.list_len = ev.list_bound + 1;
    log.servers.push(ev);
    let failed = failing(&log);
    assert!(failed.contains(&"next-monotonic".to_string()), "{failed:?}");
    assert!(failed.contains(&"list-bound".to_string()), "{failed:?}");
}

#[test]
fn dap_tag_forgery_is_caught() {
    let mut log = base();
    let idx = log.daps.iter().position(|d| d.kind != ares_core::history::DapOp::PutData && d.response.is_some()).unwrap();
    log.daps[idx].tag = Some(Tag::new(999, 99));
    assert!(failing(&log).contains(&"property1-c2".to_string()));
}

/// Small protocol executions: every per-object history fits the exhaustive
/// search, so both strategies can be compared on real histories.
fn tiny(seed: u64) -> Scenario {
    let mut s = scenario::random(seed);
    for c in &mut s.clients {
        c.ops.truncate(2);
    }
    s.clients.truncate(5);
    s.crashes.retain(|(n, _)| matches!(n, ares_core::netsim::NodeId::Server(_)));
    s
}

#[test]
fn strategies_agree_on_protocol_histories() {
    let initial = ValueDigest::initial();
    let mut compared = 0;
    for seed in 0..500 {
        let log = runner::run(&tiny(seed)).log;
        let mut objects: Vec<_> = log.ops.iter().filter_map(|o| o.object.clone()).collect();
        objects.sort();
        objects.dedup();
        for obj in objects {
            let ops = log
                .ops
                .iter()
                .filter(|o| matches!(o.kind, OpKind::Read | OpKind::Write) && o.object.as_ref() == Some(&obj));
            let h = register_history(ops).unwrap();
            if h.len() > 12 {
                continue;
            }
            compared += 1;
            assert!(fast_path(&h, &initial).is_ok(), "seed {seed} {obj}");
            assert!(exhaustive(&h, &initial).is_ok(), "seed {seed} {obj}");
        }
    }
    assert!(compared >= 500, "{compared}");
}

fn arb_history() -> impl Strategy<Value = Vec<RegOp>> {
    prop::collection::vec((any::<bool>(), 0u8..4, 0u64..20, 1u64..8, any::<bool>()), 1..8).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (write, v, inv, len, done))| RegOp {
                id: i as u64,
                kind: if write { RegKind::Write } else { RegKind::Read },
                value: if v == 0 { ValueDigest::initial() } else { ValueDigest::of(&[v]) },
                tag: None,
                invoke: inv * 2,
                response: if done || !write { Some(inv * 2 + len * 2 + 1) } else { None },
            })
            .collect()
    })
}

proptest! {
    /// Without tags only the exhaustive search applies; check_linearizable
    /// must return whatever it finds, and any witness must be a valid order.
    #[test]
    fn witnesses_are_valid(h in arb_history()) {
        let initial = ValueDigest::initial();
        let verdict = check_linearizable(&h, &initial).unwrap();
        prop_assert_eq!(verdict.is_ok(), exhaustive(&h, &initial).is_ok());
        if let ares_core::verify::linearizability::Verdict::Linearizable { witness } = verdict {
            let pos = |id: u64| witness.iter().position(|w| *w == id);
            let mut current = initial.clone();
            for id in &witness {
                let op = &h[*id as usize];
                match op.kind {
                    RegKind::Write => current = op.value.clone(),
                    RegKind::Read => prop_assert_eq!(&op.value, &current),
                }
            }
            for a in &h {
                for b in &h {
                    if a.precedes(b) {
                        if let (Some(pa), Some(pb)) = (pos(a.id), pos(b.id)) {
                            prop_assert!(pa < pb);
                        }
                    }
                }
                if a.response.is_some() {
                    prop_assert!(pos(a.id).is_some());
                }
            }
        }
    }
}
