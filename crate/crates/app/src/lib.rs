//! Command-line front end of the traffic bridge: configuration, lifecycle,
//! statistics and the viewer WebSocket.

pub mod config;
pub mod runtime;
pub mod scene;
pub mod stats;

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use traffic_bridge::net::plan_traffic_lights;

use crate::config::AppConfig;

/// Counts reported by `bridge check-net`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetReport {
    pub lanes: usize,
    pub connections: usize,
    pub traffic_light_junctions: usize,
    pub controlled_links: usize,
    pub light_spawns: usize,
    /// Junction id -> number of controlled links.
    pub links_per_junction: BTreeMap<String, usize>,
}

pub fn check_net(path: &Path, config: &AppConfig) -> anyhow::Result<NetReport> {
    let net = runtime::load_network(path)?;
    let plan = plan_traffic_lights(&net, &config.mapper, config.lights.plan_options())?;
    Ok(NetReport {
        lanes: net.lanes.len(),
        connections: net.connection_count,
        traffic_light_junctions: net.tl_junctions.len(),
        controlled_links: net.tl_connections.len(),
        light_spawns: plan.spawns.len(),
        links_per_junction: plan.index.iter().map(|(tl, links)| (tl.clone(), links.len())).collect(),
    })
}

impl std::fmt::Display for NetReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "lanes: {}", self.lanes)?;
        writeln!(f, "connections: {}", self.connections)?;
        writeln!(f, "traffic-light junctions: {}", self.traffic_light_junctions)?;
        writeln!(f, "controlled links: {}", self.controlled_links)?;
        writeln!(f, "light spawns: {}", self.light_spawns)?;
        for (tl, n) in &self.links_per_junction {
            writeln!(f, "  {tl}: {n} links")?;
        }
        Ok(())
    }
}
