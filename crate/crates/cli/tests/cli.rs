use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ares(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ares")).args(args).current_dir(dir).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", &format!("{name}.toml")].iter().collect();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ares(&["run", &scenario("stable-read")], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS linearizability"));
    for f in ["stable-read.trace.jsonl", "stable-read.ops.jsonl", "stable-read.report.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("stable-read.report.json")).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
}

#[test]
fn explicit_paths_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, name: &str| {
        let trace = dir.path().join(format!("{name}.trace"));
        let out = ares(
            &["run", &scenario("longevity"), "--seed", seed, "--trace", trace.to_str().unwrap(), "--no-verify"],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
        fs::read(trace).unwrap()
    };
    let a = run("5", "a");
    let b = run("5", "b");
    let c = run("6", "c");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn verify_accepts_recorded_log_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let ops = dir.path().join("ops.jsonl");
    let out = ares(&["run", &scenario("gc-chain"), "--ops", ops.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let out = ares(&["verify", ops.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));

    // Point the fresh reader's result at the initial value.
    let text = fs::read_to_string(&ops).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let read = lines.iter_mut().filter(|v| v["kind"] == "read").last().unwrap();
    read["tag"] = "0.0".into();
    read["value"] = "e3b0c44298fc1c14".into();
    let forged: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    fs::write(&ops, forged.join("\n") + "\n").unwrap();
    let out = ares(&["verify", ops.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL linearizability"));
}

#[test]
fn summarize_prints_phases() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    ares(&["run", &scenario("gc-chain"), "--trace", trace.to_str().unwrap()], dir.path());
    let out = ares(&["summarize", trace.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let table = stdout(&out);
    for name in ["read.phase1", "read.phase2", "add-config", "update-config", "finalize-config", "gc"] {
        assert!(table.contains(name), "{name} missing from\n{table}");
    }
    let out = ares(&["summarize", "--json", trace.to_str().unwrap()], dir.path());
    assert!(stdout(&out).contains("\"mean_round_trips\""));
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "servers = 3\ninitial = \"c0\"\n[[configs]]\nname = \"c0\"\ndap = \"raid\"\n").unwrap();
    let out = ares(&["run", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 5"), "{err}");

    let out = ares(&["run", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    let junk = dir.path().join("junk.jsonl");
    fs::write(&junk, "{\"type\":\"op\"}\nnot json\n").unwrap();
    assert_eq!(ares(&["verify", junk.to_str().unwrap()], dir.path()).status.code(), Some(2));
    assert_eq!(ares(&["summarize", junk.to_str().unwrap()], dir.path()).status.code(), Some(2));
}
