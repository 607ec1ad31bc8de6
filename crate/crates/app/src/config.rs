//! Application configuration.
//!
//! Values come from built-in defaults, then an optional TOML file, then
//! command-line flags, each layer overriding the previous one. Relative
//! paths in a file are resolved against the file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use traffic_bridge::bridge::BridgeConfig;
use traffic_bridge::geo::{CoordinateMapper, Point3};
use traffic_bridge::net::{PlanOptions, DEFAULT_HEIGHT_OFFSET};
use traffic_bridge::osc::OscConfig;
use traffic_bridge::traci::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraciConfig {
    pub host: String,
    pub port: u16,
    /// Extra connection attempts after the first one.
    pub retries: u32,
    /// Seconds between connection attempts.
    pub retry_delay: f64,
}

impl Default for TraciConfig {
    fn default() -> Self {
        Self { host: "127.0.0.1".into(), port: 8813, retries: 10, retry_delay: 1.0 }
    }
}

impl TraciConfig {
    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy { retries: self.retries, delay: Duration::from_secs_f64(self.retry_delay) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LightConfig {
    /// Meters above the end of the incoming lane.
    pub height_offset: f64,
    pub face_approach: bool,
}

impl Default for LightConfig {
    fn default() -> Self {
        Self { height_offset: DEFAULT_HEIGHT_OFFSET, face_approach: false }
    }
}

impl LightConfig {
    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions { height_offset: self.height_offset, face_approach: self.face_approach }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WebSocketConfig {
    pub enabled: bool,
    pub bind: String,
    /// Snapshots per second sent to viewers.
    pub snapshot_rate: f64,
    /// Snapshots queued per client before the client is dropped.
    pub client_queue: usize,
}

impl Default for WebSocketConfig {
    fn default() -> Self {
        Self { enabled: true, bind: "127.0.0.1:8080".into(), snapshot_rate: 20.0, client_queue: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub net_file: PathBuf,
    pub heightfield: Option<PathBuf>,
    /// Consumer ticks per second.
    pub tick_rate: f64,
    /// Seconds between stats lines.
    pub stats_interval: f64,
    /// Starting listener position in engine units, until a viewer moves it.
    pub listener: Point3,
    pub traci: TraciConfig,
    pub mapper: CoordinateMapper,
    pub lights: LightConfig,
    pub bridge: BridgeConfig,
    pub osc: OscConfig,
    pub websocket: WebSocketConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            net_file: PathBuf::from("city.net.xml"),
            heightfield: None,
            tick_rate: 60.0,
            stats_interval: 1.0,
            listener: Point3::default(),
            traci: TraciConfig::default(),
            mapper: CoordinateMapper::default(),
            lights: LightConfig::default(),
            bridge: BridgeConfig::default(),
            osc: OscConfig::default(),
            websocket: WebSocketConfig::default(),
        }
    }
}

/// Command-line overrides. `None` leaves the lower layer's value alone.
#[derive(Debug, Clone, Default, PartialEq, clap::Args)]
pub struct Overrides {
    /// TraCI server host
    #[arg(long)]
    pub host: Option<String>,
    /// TraCI server port
    #[arg(long)]
    pub port: Option<u16>,
    /// Connection retries before giving up
    #[arg(long)]
    pub retries: Option<u32>,
    /// SUMO network file
    #[arg(long = "net")]
    pub net_file: Option<PathBuf>,
    /// Heightfield file
    #[arg(long)]
    pub heightfield: Option<PathBuf>,
    /// Simulation request rate in Hz
    #[arg(long)]
    pub rate: Option<f64>,
    /// Consumer tick rate in Hz
    #[arg(long)]
    pub tick_rate: Option<f64>,
    /// Culling radius in meters
    #[arg(long)]
    pub radius: Option<f64>,
    /// Engine units per meter
    #[arg(long)]
    pub units_per_meter: Option<f64>,
    /// OSC destination, host:port
    #[arg(long)]
    pub osc_dest: Option<String>,
    /// Disable the OSC stream
    #[arg(long)]
    pub no_osc: bool,
    /// WebSocket bind address
    #[arg(long)]
    pub ws_bind: Option<String>,
    /// Disable the WebSocket server
    #[arg(long)]
    pub no_ws: bool,
    /// Snapshots per second sent to viewers
    #[arg(long)]
    pub snapshot_rate: Option<f64>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        let joined = base.join(&*p);
        *p = std::path::absolute(&joined).unwrap_or(joined);
    }
}

impl AppConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut config.net_file);
        if let Some(h) = config.heightfield.as_mut() {
            resolve(base, h);
        }
        Ok(config)
    }

    /// Defaults, overlaid by `file` if given, overlaid by `flags`.
    pub fn layered(file: Option<&Path>, flags: &Overrides) -> anyhow::Result<Self> {
        let mut config = match file {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        config.apply(flags);
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.host {
            self.traci.host = v.clone();
        }
        if let Some(v) = o.port {
            self.traci.port = v;
        }
        if let Some(v) = o.retries {
            self.traci.retries = v;
        }
        if let Some(v) = &o.net_file {
            self.net_file = v.clone();
        }
        if let Some(v) = &o.heightfield {
            self.heightfield = Some(v.clone());
        }
        if let Some(v) = o.rate {
            self.bridge.rate_n = v;
        }
        if let Some(v) = o.tick_rate {
            self.tick_rate = v;
        }
        if let Some(v) = o.radius {
            self.bridge.culling_radius = v;
        }
        if let Some(v) = o.units_per_meter {
            self.mapper.units_per_meter = v;
        }
        if let Some(v) = &o.osc_dest {
            self.osc.destination = v.clone();
        }
        if o.no_osc {
            self.osc.enabled = false;
        }
        if let Some(v) = &o.ws_bind {
            self.websocket.bind = v.clone();
        }
        if o.no_ws {
            self.websocket.enabled = false;
        }
        if let Some(v) = o.snapshot_rate {
            self.websocket.snapshot_rate = v;
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !self.net_file.is_file() {
            bail!("network file {} does not exist", self.net_file.display());
        }
        if let Some(h) = &self.heightfield {
            if !h.is_file() {
                bail!("heightfield file {} does not exist", h.display());
            }
        }
        for (name, rate) in
            [("tick_rate", self.tick_rate), ("stats_interval", self.stats_interval), ("websocket.snapshot_rate", self.websocket.snapshot_rate)]
        {
            if !(rate > 0.0 && rate.is_finite()) {
                bail!("{name} must be positive, got {rate}");
            }
        }
        if self.websocket.client_queue == 0 {
            bail!("websocket.client_queue must be at least 1");
        }
        if !self.listener.is_finite() {
            bail!("listener position must be finite");
        }
        if !(self.traci.retry_delay >= 0.0 && self.traci.retry_delay.is_finite()) {
            bail!("traci.retry_delay must be non-negative, got {}", self.traci.retry_delay);
        }
        self.mapper.validate()?;
        self.bridge.validate().map_err(anyhow::Error::msg)?;
        if self.osc.enabled {
            self.osc.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_toml() {
        let c = AppConfig::default();
        assert_eq!(AppConfig::parse(&c.to_toml()).unwrap(), c);
        assert_eq!(AppConfig::parse("").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(AppConfig::parse("tick_rat = 30").is_err());
        assert!(AppConfig::parse("[osc]\nport = 1").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = AppConfig::parse("[bridge]\nrate_n = 5.0\nculling_radius = 100.0").unwrap();
        c.apply(&Overrides { rate: Some(20.0), no_osc: true, ..Default::default() });
        assert_eq!(c.bridge.rate_n, 20.0);
        assert_eq!(c.bridge.culling_radius, 100.0);
        assert!(!c.osc.enabled);
    }
}
