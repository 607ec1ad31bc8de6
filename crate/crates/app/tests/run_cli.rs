mod common;

use std::path::Path;
use std::process::{Command, Output};

use traffic_bridge::mock::{MockOptions, MockServer, Scenario};

fn run(sub: &[&str], port: u16, extra: &[&str]) -> Output {
    let net = common::demo("city.net.xml");
    Command::new(env!("CARGO_BIN_EXE_bridge"))
        .env("RUST_LOG", "warn")
        .args(sub)
        .args(["--net", net.to_str().unwrap(), "--port", &port.to_string(), "--retries", "0"])
        .args(["--ws-bind", "127.0.0.1:0", "--no-osc"])
        .args(extra)
        .output()
        .unwrap()
}

fn stats_lines(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn summary(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no summary in {err}"));
    serde_json::from_str(line).unwrap()
}

#[test]
fn run_against_mock_ends_with_final_line() {
    let server = common::city_mock();
    let out = run(&["run"], server.port(), &["--duration", "1.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = stats_lines(&out);
    let last = lines.last().unwrap();
    assert_eq!(last["event"], "final");
    assert!(lines.iter().filter(|l| l["event"] == "stats").count() >= 1);
    let sim = last["sim_time"].as_f64().unwrap();
    assert!((1.2..=1.6).contains(&sim), "sim_time {sim}");
    assert_eq!(last["dropped_publications"], 0);
    let s = summary(&out);
    assert_eq!(s["exit"], "duration_elapsed");
    assert_eq!(s["released_slots"], last["active"]);
    server.shutdown();
}

#[test]
fn unreachable_server_exits_nonzero() {
    let free = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let out = run(&["run"], free, &["--duration", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn lost_server_is_an_orderly_failure() {
    let scenario = Scenario::load(&common::demo("city.toml")).unwrap();
    let server =
        MockServer::start_with(scenario, "127.0.0.1:0", MockOptions { close_after_messages: Some(40) }).unwrap();
    let out = run(&["run"], server.port(), &["--duration", "10"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let last = stats_lines(&out).pop().unwrap();
    assert_eq!(last["event"], "final");
    assert!(summary(&out)["exit"]["producer_lost"].is_string());
}

fn positions(lines: &[serde_json::Value]) -> Vec<(f64, u64)> {
    lines.iter().map(|l| (l["sim_time"].as_f64().unwrap(), l["generation"].as_u64().unwrap())).collect()
}

#[test]
fn capture_then_replay_without_server() {
    let dir = tempfile::tempdir().unwrap();
    let capture = dir.path().join("city.capture");
    let server = common::city_mock();
    let out = run(&["capture", "--out", capture.to_str().unwrap()], server.port(), &["--duration", "1.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    server.shutdown();
    let captured = summary(&out)["publications"].as_u64().unwrap();
    assert!(captured >= 10);
    assert!(Path::new(&capture).metadata().unwrap().len() > 0);

    // nothing listens on port 1; replay must not try to connect
    let out = run(&["replay", capture.to_str().unwrap()], 1, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["exit"], "source_finished");
    assert_eq!(s["publications"].as_u64().unwrap(), captured);
    let lines = stats_lines(&out);
    let last = lines.last().unwrap();
    assert_eq!(last["event"], "final");
    assert_eq!(last["generation"].as_u64().unwrap(), captured);
    let p = positions(&lines);
    assert!(p.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
}

#[test]
fn mock_server_subcommand_serves_for_duration() {
    let out = Command::new(env!("CARGO_BIN_EXE_bridge"))
        .args(["mock-server", "--bind", "127.0.0.1:0", "--duration", "0.2", "--scenario"])
        .arg(common::demo("city.toml"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("listening on 127.0.0.1:"), "{text}");
}

#[cfg(unix)]
#[test]
fn interrupt_exits_zero_with_final_line() {
    use std::process::Stdio;
    use std::time::{Duration, Instant};

    let server = common::city_mock();
    let net = common::demo("city.net.xml");
    let child = Command::new(env!("CARGO_BIN_EXE_bridge"))
        .env("RUST_LOG", "warn")
        .args(["run", "--net", net.to_str().unwrap(), "--port", &server.port().to_string()])
        .args(["--ws-bind", "127.0.0.1:0", "--no-osc"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    std::thread::sleep(Duration::from_millis(1200));
    let sent = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(sent.success());
    let started = Instant::now();
    let out = child.wait_with_output().unwrap();
    assert!(started.elapsed() < Duration::from_secs(3));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stats_lines(&out).last().unwrap()["event"], "final");
    assert_eq!(summary(&out)["exit"], "interrupted");
}
