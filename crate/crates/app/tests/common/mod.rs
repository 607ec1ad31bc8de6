#![allow(dead_code)]

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use bridge_app::config::AppConfig;
use traffic_bridge::mock::{MockServer, Scenario};

pub fn app_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn demo(name: &str) -> PathBuf {
    app_dir().join("demo").join(name)
}

pub fn fixture(name: &str) -> PathBuf {
    app_dir().join("../core/fixtures").join(name)
}

pub fn mock(scenario: Scenario) -> MockServer {
    MockServer::start(scenario, "127.0.0.1:0").expect("mock server starts")
}

pub fn city_mock() -> MockServer {
    mock(Scenario::load(&demo("city.toml")).unwrap())
}

/// Demo network, given mock port, OSC off, viewer endpoint on an ephemeral port.
pub fn config_for(port: u16) -> AppConfig {
    let mut c = AppConfig { net_file: demo("city.net.xml"), stats_interval: 0.25, ..Default::default() };
    c.traci.port = port;
    c.traci.retries = 0;
    c.osc.enabled = false;
    c.websocket.bind = "127.0.0.1:0".into();
    c
}

/// Vehicles that never move, one per point.
pub fn parked(points: &[(&str, f64, f64)]) -> Scenario {
    let mut text = String::from("step_length = 0.1\n");
    for (id, x, y) in points {
        text.push_str(&format!(
            "[[vehicles]]\nid = \"{id}\"\ndepart = 0.0\nroute = [[{x}, {y}], [{}, {y}]]\nspeeds = [[0.0, 0.0]]\n",
            x + 1.0
        ));
    }
    Scenario::parse(&text).unwrap()
}

/// In-memory sink for stats lines.
#[derive(Clone, Default)]
pub struct SharedBuf(pub Arc<Mutex<Vec<u8>>>);

impl SharedBuf {
    pub fn lines(&self) -> Vec<serde_json::Value> {
        let bytes = self.0.lock().unwrap().clone();
        String::from_utf8(bytes).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }
}

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}
