mod common;

use std::path::Path;
use std::process::Command;

use meshshare::harness::run;
use meshshare::kernel::node::NodeEvent;
use meshshare::sim::TraceEvent;
use meshshare::DeviceId;

use common::*;

#[test]
fn corpus_outcomes() {
    for (name, s) in corpus() {
        let out = run(&s, None);
        assert_eq!(out.violations(), &Default::default(), "{name}");
        if name == "ttl_exhausted.toml" {
            assert!(!out.succeeded(), "{name}");
        } else {
            assert!(out.succeeded(), "{name}: {}", out.metrics.report());
        }
    }
}

#[test]
fn short_ttl_fails_cleanly() {
    let out = run(&load("ttl_exhausted.toml"), None);
    let d = &out.metrics.downloads[0];
    assert_eq!(d.failure.as_deref(), Some("ttl_exhausted"));
    assert!(d.subnet_hops <= 2);
    // every courier made it home
    for c in [5, 6, 7] {
        let n = out.world.node(DeviceId(c)).unwrap();
        assert!(!n.is_root());
        assert!(out.world.attachment(DeviceId(c)).is_some());
    }
    assert!(out.world.node(DeviceId(9)).unwrap().storage.is_empty());
}

#[test]
fn rescheduled_stop_time_truncates() {
    let s = load("chain.toml");
    let out = run(&s, Some(100_000));
    assert!(out.world.trace().iter().all(|r| r.time <= 100_000));
    assert!(out.metrics.downloads.is_empty());
}

#[test]
fn golden_trace() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let out = run(&load("intra_subnet.toml"), None);
    let trace = out.world.trace_jsonl();
    let metrics = out.metrics.to_json();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(dir.join("intra_subnet.jsonl"), &trace).unwrap();
        std::fs::write(dir.join("intra_subnet.metrics.json"), &metrics).unwrap();
    }
    assert_eq!(trace, std::fs::read_to_string(dir.join("intra_subnet.jsonl")).unwrap());
    assert_eq!(metrics, std::fs::read_to_string(dir.join("intra_subnet.metrics.json")).unwrap());
}

#[test]
fn different_seeds_give_different_traces() {
    let mut a = load("intra_subnet.toml");
    a.seed = 1;
    let mut b = a.clone();
    b.seed = 2;
    let (ra, rb) = (run(&a, None), run(&b, None));
    assert_ne!(ra.world.trace_jsonl(), rb.world.trace_jsonl());
    assert!(ra.succeeded() && rb.succeeded());
}

#[test]
fn trace_lines_are_json_objects() {
    let out = run(&load("swarm.toml"), None);
    for line in out.world.trace_jsonl().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["time"].is_u64() && v["device"].is_u64() && v["kind"].is_string(), "{line}");
    }
    let delivered = out
        .world
        .trace()
        .iter()
        .filter(|r| matches!(r.event, TraceEvent::Node(NodeEvent::MissionDelivered { .. })))
        .count();
    assert_eq!(delivered, 3);
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_meshshare")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn scenario_path(name: &str) -> String {
    scenario_dir().join(name).to_string_lossy().into_owned()
}

#[test]
fn cli_validate() {
    let (code, stdout, _) = cli(&["validate", &scenario_path("chain.toml")]);
    assert_eq!(code, 0);
    assert!(stdout.contains("ok"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n\n[[device]]\nid = 1\n\n[[script]]\nat = 5\naction = \"teleport\"\ndevice = 1\n").unwrap();
    let (code, _, stderr) = cli(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(stderr.contains("line "), "{stderr}");
}

#[test]
fn cli_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let metrics = dir.path().join("m.json");
    let (code, stdout, _) = cli(&[
        "run",
        &scenario_path("intra_subnet.toml"),
        "--trace",
        trace.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("success rate     100.0%"));
    assert!(std::fs::read_to_string(&trace).unwrap().lines().count() > 10);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert_eq!(m["downloads"][0]["success"], true);
}

#[test]
fn cli_exit_codes() {
    assert_eq!(cli(&["run", &scenario_path("ttl_exhausted.toml")]).0, 1);
    assert_eq!(cli(&["run", &scenario_path("chain.toml"), "--set", "ttl=2"]).0, 1);
    assert_eq!(cli(&["run", &scenario_path("intra_subnet.toml"), "--set", "bogus=1"]).0, 2);
    assert_eq!(cli(&["run", "/nonexistent.toml"]).0, 2);
    // stopping before the download is requested leaves nothing to fail
    assert_eq!(cli(&["run", &scenario_path("chain.toml"), "--until", "1000", "--seed", "9"]).0, 0);
}
