use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::Duration;

use serde_json::Value;

fn limbnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_limbnet")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn testbed(link: &str, duration: f64) -> String {
    format!(r#"{{"streams":["rgbd_camera","command"],"link":"{link}","duration_s":{duration}}}"#)
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn tables_render_both_tables() {
    let out = limbnet(&["tables"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("Configuration         Uplink speed  Downlink speed  Average RTT"));
    assert!(text.contains("4G (10 MHz)                            148 ms                  172 ms"));
    assert!(text.contains("5G (60 MHz) opt.                        18 ms                   45 ms"));
    assert_eq!(text, String::from_utf8(limbnet(&["tables"]).stdout).unwrap());

    let out = limbnet(&["tables", "--json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let access: Vec<i64> = v["transmission"].as_array().unwrap().iter().map(|r| r["access_ms_rounded"].as_i64().unwrap()).collect();
    assert_eq!(access, [172, 95, 77, 60, 45, 41]);
}

#[test]
fn catalog_lists_seven_streams() {
    let out = limbnet(&["catalog", "--json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 7);
    let emg = rows.iter().find(|r| r["id"] == "emg64").unwrap();
    assert_eq!(emg["rate_bps"], 2_048_000.0);
}

#[test]
fn simulate_testbed_reports_41_ms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tb.json", &testbed("5g100opt", 3.0));
    let out = limbnet(&["simulate", &cfg, "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let cam = v["metrics"]["streams"].as_array().unwrap().iter().find(|s| s["stream_id"] == "rgbd_camera").unwrap();
    assert_eq!(cam["latency"]["p50_ms"].as_f64().unwrap().round(), 41.0);
    assert_eq!(v["metrics"]["budget_violation_fraction"], 0.0);
    assert_eq!(v["tool"], "limbnet");
    assert!(v["tool_version"].is_string());
    let m = &v["metrics"];
    assert_eq!(
        m["generated"].as_u64().unwrap(),
        m["delivered"].as_u64().unwrap() + m["dropped"].as_u64().unwrap() + m["in_flight"].as_u64().unwrap()
    );
}

#[test]
fn strict_budget_fails_on_4g10() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "slow.json", &testbed("4g10", 2.0));
    assert_eq!(limbnet(&["simulate", &cfg, "--strict-budget"]).status.code(), Some(3));
    assert_eq!(limbnet(&["simulate", &cfg]).status.code(), Some(0));
}

#[test]
fn invalid_input_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let bad = write(dir.path(), "bad.json", "{\"streams\": [");
    let out = limbnet(&["simulate", &bad, "--out", out_dir.to_str().unwrap(), "--trace", "t.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(!out_dir.exists());

    let unknown = write(dir.path(), "unknown.json", r#"{"streams":[],"link":"4g10","duration_s":1,"jitter":2}"#);
    let out = limbnet(&["simulate", &unknown]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("jitter"));

    let negative = write(dir.path(), "neg.json", &testbed("4g10", -1.0));
    let out = limbnet(&["simulate", &negative]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duration_s"));
}

#[test]
fn out_dir_receives_report_trace_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sc.json",
        r#"{"streams":["rgbd_camera","command"],"link":"5g60","duration_s":2,
            "rtt_model":{"mode":"shifted_lognormal","sigma":0.3}}"#,
    );
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    let out = limbnet(&["simulate", &cfg, "--out", o, "--seed", "77", "--trace", "trace.jsonl", "--csv", "lat.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scenario"]["seed"], 77);
    let trace = fs::read_to_string(out_dir.join("trace.jsonl")).unwrap();
    assert!(trace.starts_with("{\"type\":\"header\""));
    let csv = fs::read_to_string(out_dir.join("lat.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, report["metrics"]["delivered"].as_u64().unwrap() + 1);

    // The echoed scenario reproduces the metrics.
    let echo = write(dir.path(), "echo.json", &report["scenario"].to_string());
    let again = limbnet(&["simulate", &echo, "--json"]);
    let again: Value = serde_json::from_slice(&again.stdout).unwrap();
    assert_eq!(again["metrics"], report["metrics"]);

    // Same seed, same trace bytes.
    let out2 = dir.path().join("out2");
    limbnet(&["simulate", &cfg, "--out", out2.to_str().unwrap(), "--seed", "77", "--trace", "trace.jsonl"]);
    assert_eq!(trace, fs::read_to_string(out2.join("trace.jsonl")).unwrap());
}

#[test]
fn all_runs_every_scenario_in_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let scenarios = dir.path().join("scenarios");
    fs::create_dir(&scenarios).unwrap();
    for link in ["4g20", "5g100", "5g60opt"] {
        write(&scenarios, &format!("{link}.json"), &testbed(link, 1.0));
    }
    let out_dir = dir.path().join("out");
    let out = limbnet(&["simulate", "--all", scenarios.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let merged: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("reports.json")).unwrap()).unwrap();
    assert_eq!(merged.as_array().unwrap().len(), 3);
    assert!(out_dir.join("5g100.report.json").exists());
}

#[test]
fn device_without_edge_exits_4() {
    let port = free_port();
    let out = limbnet(&["emulate", "device", "--connect", &format!("127.0.0.1:{port}"), "--duration-s", "1"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn edge_and_device_agree_with_analytic_latency() {
    let port = free_port();
    let addr = format!("127.0.0.1:{port}");
    let mut edge = Command::new(env!("CARGO_BIN_EXE_limbnet"))
        .args(["emulate", "edge", "--listen", &addr, "--processing-ms", "0"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    thread::sleep(Duration::from_millis(300));
    let out = limbnet(&["emulate", "device", "--connect", &addr, "--duration-s", "3", "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["comparison"]["agrees"], true, "{v}");
    assert_eq!(v["report"]["malformed"], 0);
    for key in ["samples_ms", "achieved_ul_mbps", "missed", "malformed"] {
        assert!(!v["report"][key].is_null(), "{key}");
    }

    let killed = Command::new("kill").args(["-INT", &edge.id().to_string()]).status().unwrap();
    assert!(killed.success());
    let status = edge.wait().unwrap();
    assert_eq!(status.code(), Some(0));
}
