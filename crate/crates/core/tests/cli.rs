use std::path::PathBuf;
use std::process::{Command, Output};

use optswp::schedule::ModuloSchedule;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn optswp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optswp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &PathBuf) -> &str {
    p.to_str().unwrap()
}

#[test]
fn schedule_g4_json() {
    let (m, l) = (fixture("toy5.json"), fixture("g4.json"));
    let o = optswp(&["schedule", "-m", path(&m), "-l", path(&l), "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let s = ModuloSchedule::from_json(&stdout(&o)).unwrap();
    assert_eq!((s.ii, s.stages), (1, 4));
}

#[test]
fn schedule_written_to_file_passes_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g4.sched.json");
    let (m, l) = (fixture("toy5.json"), fixture("g4.json"));
    let o = optswp(&["schedule", "-m", path(&m), "-l", path(&l), "-o", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let o = optswp(&["check", "-m", path(&m), "-l", path(&l), "-s", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(stdout(&o).trim(), "legal");
    let o = optswp(&["simulate", "-m", path(&m), "-l", path(&l), "-s", path(&out), "--trip-count", "1024"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("cycles=1027"), "{}", stdout(&o));
}

#[test]
fn check_rejects_a_tampered_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let (m, l) = (fixture("toy5.json"), fixture("g4.json"));
    let o = optswp(&["schedule", "-m", path(&m), "-l", path(&l), "--format", "json"]);
    let mut s = ModuloSchedule::from_json(&stdout(&o)).unwrap();
    for op in &mut s.ops {
        op.cycle = 0;
    }
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, s.to_json()).unwrap();
    let o = optswp(&["check", "-m", path(&m), "-l", path(&l), "-s", path(&bad)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sequential_schedule_simulates_to_4096() {
    let (m, l) = (fixture("toy5.json"), fixture("g4.json"));
    let o = optswp(&[
        "simulate", "-m", path(&m), "-l", path(&l), "--stages", "1", "--trip-count", "1024",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("II=4 stages=1 trip_count=1024 cycles=4096"), "{}", stdout(&o));
}

#[test]
fn trace_is_json_lines_on_stderr() {
    let (m, l) = (fixture("toy5.json"), fixture("g4.json"));
    let o = optswp(&["schedule", "-m", path(&m), "-l", path(&l), "--trace"]);
    assert_eq!(o.status.code(), Some(0));
    let err = String::from_utf8(o.stderr).unwrap();
    let rows: Vec<serde_json::Value> = err.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!rows.is_empty());
    assert_eq!(rows.last().unwrap()["status"], "sat");
    assert!(rows.iter().all(|r| r["ii"] == 1));
}

#[test]
fn explain_names_the_write_port() {
    let (m, l) = (fixture("rf1_1port.json"), fixture("triple_write.json"));
    let runs: Vec<Output> = (0..3)
        .map(|_| optswp(&["explain", "-m", path(&m), "-l", path(&l), "--ii", "2"]))
        .collect();
    for o in &runs {
        assert_eq!(o.status.code(), Some(1));
        assert_eq!(o.stdout, runs[0].stdout);
    }
    let text = stdout(&runs[0]);
    assert!(text.contains("[port_contention]"), "{text}");
    assert!(text.contains("ip0"), "{text}");
}

#[test]
fn explain_json_is_a_diagnosis() {
    let (m, l) = (fixture("rf1_1port.json"), fixture("triple_write.json"));
    let o = optswp(&["explain", "-m", path(&m), "-l", path(&l), "--ii", "2", "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    let d: optswp::explain::Diagnosis = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(d.ii, 2);
    assert!(d
        .findings
        .iter()
        .any(|f| f.category == optswp::explain::Category::PortContention && f.entities.iter().any(|e| e.contains("ip0"))));
}

#[test]
fn malformed_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("m.json");
    std::fs::write(&bad, "{\"slots\": 3}").unwrap();
    let l = fixture("g4.json");
    let o = optswp(&["schedule", "-m", path(&bad), "-l", path(&l)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let o = optswp(&["schedule", "-m", "/nonexistent/m.json", "-l", path(&l)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exhausted_budget_exits_3() {
    let (m, l) = (fixture("toy5.json"), fixture("g4.json"));
    let o = optswp(&["schedule", "-m", path(&m), "-l", path(&l), "--resource-limit", "1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn export_smt_declares_and_names_assertions() {
    let (m, l) = (fixture("toy5.json"), fixture("g4.json"));
    let o = optswp(&["export-smt", "-m", path(&m), "-l", path(&l), "--ii", "1", "--stages", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("(declare-fun"));
    assert!(text.contains(":named"));
    assert!(text.contains("(check-sat)"));
}

#[test]
fn baseline_on_routing_scarce_is_worse() {
    let (m, l) = (fixture("routing_scarce_machine.json"), fixture("routing_scarce_loop.json"));
    let b = optswp(&["baseline", "-m", path(&m), "-l", path(&l), "--format", "json"]);
    assert_eq!(b.status.code(), Some(0));
    let o = optswp(&["schedule", "-m", path(&m), "-l", path(&l), "--format", "json"]);
    let heur = ModuloSchedule::from_json(&stdout(&b)).unwrap();
    let opt = ModuloSchedule::from_json(&stdout(&o)).unwrap();
    assert_eq!((opt.ii, heur.ii), (3, 4));
}

#[test]
fn bounds_reports_the_stage_window() {
    let (m, l) = (fixture("toy5.json"), fixture("g4.json"));
    let o = optswp(&["bounds", "-m", path(&m), "-l", path(&l), "--ii", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("MII=1"), "{text}");
}
