mod common;

use std::process::Command;

use bridge_app::config::{AppConfig, Overrides};

fn bridge() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bridge"));
    c.env("RUST_LOG", "warn");
    c
}

fn show_config(args: &[&str]) -> String {
    let out = bridge().arg("show-config").args(args).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn effective_config_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let demo = common::demo("bridge.toml");
    let first = show_config(&["-c", demo.to_str().unwrap(), "--port", "9999", "--radius", "120", "--no-osc"]);
    let saved = dir.path().join("effective.toml");
    std::fs::write(&saved, &first).unwrap();
    let second = show_config(&["-c", saved.to_str().unwrap()]);
    assert_eq!(first, second);

    let a = AppConfig::parse(&first).unwrap();
    let b = AppConfig::load(&saved).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.traci.port, 9999);
    assert_eq!(a.bridge.culling_radius, 120.0);
    assert!(!a.osc.enabled);
    assert!(a.net_file.is_absolute() && a.net_file.is_file());
}

#[test]
fn flags_beat_file_beat_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.toml");
    std::fs::write(&path, "tick_rate = 30.0\n[traci]\nport = 7000\nhost = \"sim.local\"\n").unwrap();

    let file_only = AppConfig::layered(Some(&path), &Overrides::default()).unwrap();
    assert_eq!(file_only.traci.port, 7000);
    assert_eq!(file_only.tick_rate, 30.0);
    // untouched by file or flags
    assert_eq!(file_only.bridge.rate_n, AppConfig::default().bridge.rate_n);
    assert_eq!(file_only.websocket, AppConfig::default().websocket);

    let flags = Overrides { port: Some(7100), tick_rate: Some(90.0), ..Default::default() };
    let both = AppConfig::layered(Some(&path), &flags).unwrap();
    assert_eq!(both.traci.port, 7100);
    assert_eq!(both.tick_rate, 90.0);
    assert_eq!(both.traci.host, "sim.local");

    let cli = show_config(&["-c", path.to_str().unwrap(), "--port", "7100"]);
    let parsed = AppConfig::parse(&cli).unwrap();
    assert_eq!(parsed.traci.port, 7100);
    assert_eq!(parsed.traci.host, "sim.local");
}

#[test]
fn missing_net_file_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.net.xml");
    let out = bridge().args(["run", "--net", missing.to_str().unwrap(), "--retries", "0"]).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(missing.to_str().unwrap()), "{err}");
}

#[test]
fn unknown_config_keys_fail_startup() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[bridge]\nculling_radius = 10.0\nradius = 3\n").unwrap();
    let out = bridge().args(["show-config", "-c", path.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}

#[test]
fn non_positive_rates_are_rejected() {
    let mut c = common::config_for(1);
    c.websocket.snapshot_rate = 0.0;
    let err = c.validate().unwrap_err().to_string();
    assert!(err.contains("snapshot_rate"), "{err}");
    let mut c = common::config_for(1);
    c.tick_rate = -1.0;
    assert!(c.validate().is_err());
}
