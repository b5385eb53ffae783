use ares_core::history::{OpKind, RunStatus};
use ares_core::netsim::NodeId;
use ares_core::runner;
use ares_core::scenario::{self, Action, Scenario};
use ares_core::types::{ClientId, ServerId, ValueDigest};

fn bundled(name: &str) -> Scenario {
    let path = format!("{}/../../scenarios/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    Scenario::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const TWO_CONFIGS: &str = r#"
seed = 11
servers = 5
initial = "c0"

[[configs]]
name = "c0"
dap = "abd"

[[configs]]
name = "coded"
dap = "ec"
k = 3
delta = 4

[[clients]]
id = 1
ops = [{ kind = "write", object = "x", repeat = 10 }]

[[clients]]
id = 2
ops = [{ kind = "write", object = "x", at = 3, repeat = 10 }]

[[clients]]
id = 3
ops = [{ kind = "read", object = "x", at = 1, repeat = 15 }]

[[clients]]
id = 4
ops = [{ kind = "reconfig", object = "x", config = "coded", at = 20, repeat = 3 }]
"#;

#[test]
fn bundled_scenarios_pass_every_check() {
    for name in ["stable-read", "gc-chain", "batch-blocks", "longevity"] {
        let run = runner::run(&bundled(name));
        let report = run.verify();
        assert!(report.passed(), "{name}\n{}", report.render());
        assert_eq!(run.outcome().status, RunStatus::Quiescent);
    }
}

#[test]
fn reads_see_writes_across_concurrent_reconfigurations() {
    for seed in 0..30 {
        let mut s = Scenario::parse(TWO_CONFIGS).unwrap();
        s.net.seed = seed;
        let run = runner::run(&s);
        let report = run.verify();
        assert!(report.passed(), "seed {seed}\n{}", report.render());
        let installed: Vec<_> = run.log.ops.iter().filter_map(|o| o.installed).collect();
        assert_eq!(installed, vec![1, 2, 3], "seed {seed}");
    }
}

#[test]
fn legacy_and_piggyback_agree_on_values() {
    for piggyback in [true, false] {
        for gc in [true, false] {
            let mut s = Scenario::parse(TWO_CONFIGS).unwrap();
            s.features.piggyback = piggyback;
            s.features.gc = gc;
            let report = runner::run(&s).verify();
            assert!(report.passed(), "piggyback={piggyback} gc={gc}\n{}", report.render());
        }
    }
}

#[test]
fn last_read_returns_last_write() {
    let text = r#"
servers = 3
initial = "c0"
[[configs]]
name = "c0"
dap = "ec"
k = 1
[[clients]]
id = 1
ops = [{ kind = "write", object = "x", value = "one" }, { kind = "write", object = "x", value = "two" }]
[[clients]]
id = 2
ops = [{ kind = "read", object = "x", at = 10000 }]
"#;
    let run = runner::run(&Scenario::parse(text).unwrap());
    let read = run.log.ops.iter().find(|o| o.kind == OpKind::Read).unwrap();
    assert_eq!(read.value, Some(ValueDigest::of(b"two")));
    assert_eq!(read.tag.unwrap().ts, 2);
}

#[test]
fn file_roundtrip_with_and_without_batching() {
    for batching in [true, false] {
        let mut s = bundled("batch-blocks");
        s.features.batching = batching;
        let Action::FileWrite { value, .. } = s.clients[0].ops[0].action.clone() else { panic!() };
        let run = runner::run(&s);
        let read = run.log.ops.iter().find(|o| o.kind == OpKind::FileRead).unwrap();
        assert_eq!(read.value, Some(ValueDigest::of(&value)), "batching={batching}");
        let blocks = run.log.ops.iter().filter(|o| o.kind == OpKind::Read && o.parent == Some(read.op)).count();
        assert_eq!(blocks, 8);
    }
}

#[test]
fn crashed_client_leaves_pending_operation() {
    let mut s = Scenario::parse(TWO_CONFIGS).unwrap();
    s.crashes.push((NodeId::Client(ClientId(1)), 25));
    let run = runner::run(&s);
    let pending = run.log.ops.iter().filter(|o| o.client == ClientId(1) && !o.is_complete()).count();
    assert!(pending <= 1);
    assert!(run.log.ops.iter().filter(|o| o.client == ClientId(1)).count() < 10);
    let report = run.verify();
    assert!(report.passed(), "{}", report.render());
}

#[test]
fn losing_a_quorum_deadlocks_with_waiters() {
    let mut s = bundled("stable-read");
    // Bypasses validation on purpose: three of five servers go down.
    s.crashes = (1..=3).map(|i| (NodeId::Server(ServerId(i)), 0)).collect();
    let run = runner::run(&s);
    assert_eq!(run.outcome().status, RunStatus::Deadlock);
    assert!(!run.outcome().waiting.is_empty());
    assert!(run.outcome().waiting[0].contains("awaiting"), "{:?}", run.outcome().waiting);
    let report = run.verify();
    assert!(!report.check("liveness").unwrap().passed);
}

#[test]
fn seeds_change_schedules_not_outcomes() {
    let s = scenario::random(7);
    let mut other = s.clone();
    other.net.seed = 8;
    let a = runner::run(&s);
    let b = runner::run(&other);
    assert_ne!(a.trace_jsonl(), b.trace_jsonl());
    assert!(b.verify().passed());
}

#[test]
fn logs_roundtrip_through_jsonl() {
    let run = runner::run(&bundled("longevity"));
    let text = run.ops_jsonl();
    let parsed = ares_core::history::ExecutionLog::from_jsonl(&text).unwrap();
    assert_eq!(parsed, run.log);
    let spans = ares_core::trace::parse_jsonl(&run.trace_jsonl()).unwrap();
    assert_eq!(spans, run.spans);
    assert!(ares_core::trace::check_nesting(&spans).is_empty());
}

#[test]
fn every_operation_has_one_root_span() {
    let run = runner::run(&bundled("gc-chain"));
    let roots = run.spans.iter().filter(|s| s.parent.is_none()).count();
    let top_level = run.log.ops.iter().filter(|o| o.parent.is_none()).count();
    assert_eq!(roots, top_level);
}
