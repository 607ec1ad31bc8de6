use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geo::Point3;
use crate::net::{SignalState, TrafficLightPlan};

use super::interp::EntityTable;
use super::pool::{PoolStats, VehiclePool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotVehicle {
    pub id: String,
    /// Engine units.
    pub position: Point3,
    /// Engine yaw, degrees.
    pub yaw: f64,
    /// Degrees, positive nose up.
    pub pitch: f64,
    pub vtype: String,
    /// m/s
    pub speed: f64,
    /// m/s²
    pub acceleration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotLight {
    pub tl_id: String,
    pub link_index: u32,
    pub state: SignalState,
    pub position: Point3,
    pub yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub active: usize,
    pub pooled_free: usize,
    /// Known vehicles without a slot.
    pub culled: usize,
    pub sim_time: f64,
    /// Seconds the producer trails its schedule.
    pub step_lag: f64,
    pub generation: u64,
    pub pools: Vec<PoolStats>,
}

/// What a renderer needs for one consumer tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    /// Consumer clock, seconds.
    pub tick_time: f64,
    pub vehicles: Vec<SnapshotVehicle>,
    pub lights: Vec<SnapshotLight>,
    pub listener: Point3,
    /// Engine units.
    pub culling_radius: f64,
    pub stats: SnapshotStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SnapshotContext {
    pub tick_time: f64,
    pub listener: Point3,
    pub culling_radius: f64,
    pub sim_time: f64,
    pub step_lag: f64,
    pub generation: u64,
}

/// Active vehicles plus every planned light at its current signal.
pub fn build_snapshot(
    table: &EntityTable,
    plan: &TrafficLightPlan,
    light_states: &BTreeMap<String, String>,
    pool: &VehiclePool,
    ctx: SnapshotContext,
) -> SceneSnapshot {
    let vehicles: Vec<SnapshotVehicle> = table
        .iter()
        .filter(|(_, e)| e.slot.is_some())
        .map(|(id, e)| SnapshotVehicle {
            id: id.clone(),
            position: e.engine_pos,
            yaw: e.engine_yaw,
            pitch: e.pitch,
            vtype: e.target.vtype.clone(),
            speed: e.target.speed,
            acceleration: e.target.acceleration,
        })
        .collect();

    let mut signal = vec![SignalState::Unknown; plan.spawns.len()];
    for tl_id in plan.junction_ids() {
        let Some(state) = light_states.get(tl_id) else { continue };
        for (handle, s) in plan.apply_signal_string(tl_id, state) {
            signal[handle] = s;
        }
    }
    let lights = plan
        .spawns
        .iter()
        .zip(signal)
        .map(|(spawn, state)| SnapshotLight {
            tl_id: spawn.tl_id.clone(),
            link_index: spawn.link_index,
            state,
            position: spawn.position,
            yaw: spawn.yaw,
        })
        .collect();

    let stats = SnapshotStats {
        active: vehicles.len(),
        pooled_free: pool.total_free(),
        culled: table.len() - vehicles.len(),
        sim_time: ctx.sim_time,
        step_lag: ctx.step_lag,
        generation: ctx.generation,
        pools: pool.stats(),
    };
    SceneSnapshot {
        tick_time: ctx.tick_time,
        vehicles,
        lights,
        listener: ctx.listener,
        culling_radius: ctx.culling_radius,
        stats,
    }
}
