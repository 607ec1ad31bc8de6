//! Per-vehicle transmission gate.

use serde::{Deserialize, Serialize};

use crate::geo::Point3;

use super::OscConfig;

/// What a vehicle looked like when it was last transmitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentState {
    /// Engine units.
    pub position: Point3,
    /// m/s
    pub velocity: f64,
    /// Consumer clock, seconds.
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OscVehicleRecord {
    pub last_sent: Option<SentState>,
}

impl OscVehicleRecord {
    pub fn ever_sent(&self) -> bool {
        self.last_sent.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SendReason {
    FirstTransmission,
    Moved,
    VelocityChanged,
    KeepAlive,
}

/// Gate thresholds in the units the gate compares: engine units for
/// position, m/s for velocity, seconds for time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateThresholds {
    pub delta_pos: f64,
    pub delta_vel: f64,
    pub keep_alive: f64,
}

impl GateThresholds {
    pub fn new(config: &OscConfig, units_per_meter: f64) -> Self {
        Self {
            delta_pos: config.delta_pos * units_per_meter,
            delta_vel: config.delta_vel,
            keep_alive: config.keep_alive,
        }
    }
}

/// Returns the first condition that requires `position`/`velocity` to be
/// transmitted at `now`, or `None` if the vehicle can stay silent.
///
/// Conditions are checked in order: never sent, moved or changed speed
/// beyond the thresholds, keep-alive elapsed.
pub fn should_send(
    record: &OscVehicleRecord,
    position: Point3,
    velocity: f64,
    now: f64,
    gate: &GateThresholds,
) -> Option<SendReason> {
    let Some(last) = record.last_sent else {
        return Some(SendReason::FirstTransmission);
    };
    let dx = position.x - last.position.x;
    let dy = position.y - last.position.y;
    let dz = position.z - last.position.z;
    if (dx * dx + dy * dy + dz * dz).sqrt() > gate.delta_pos {
        return Some(SendReason::Moved);
    }
    if (velocity - last.velocity).abs() > gate.delta_vel {
        return Some(SendReason::VelocityChanged);
    }
    if now - last.time >= gate.keep_alive {
        return Some(SendReason::KeepAlive);
    }
    None
}
